// DOM construction for the annotation form. Slots are shown in wire
// order as "Explanation A"/"Explanation B"; nothing here knows or asks
// which one is the reference.

import type { BatchItem, GateOutcome } from "./api.js";
import {
  BatchView,
  RATINGS,
  RATING_LABELS,
  SHORTCOMINGS,
  SHORTCOMING_LABELS,
  itemSchemaError,
  type Rating,
} from "./state.js";

export interface Handlers {
  onLabel(instanceId: string, label: string): void;
  onRating(instanceId: string, slotId: string, rating: Rating): void;
  onShortcoming(instanceId: string, slotId: string, name: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function taskPrompt(item: BatchItem): HTMLElement {
  const prompt = el("div", "task-prompt");
  if (item.task === "winogrande") {
    prompt.append(
      el("p", "schema", item.task_fields["schema"] ?? ""),
      el("p", "question", "Which option fills the blank?"),
    );
  } else {
    prompt.append(
      el("p", "statement", `Statement 1: ${item.task_fields["statement1"]}`),
      el("p", "statement", `Statement 2: ${item.task_fields["statement2"]}`),
      el("p", "question", "Which statement does not make sense?"),
    );
  }
  return prompt;
}

function labelGroup(
  item: BatchItem,
  selected: string | null,
  handlers: Handlers,
): HTMLElement {
  const group = el("fieldset", "label-options");
  group.append(el("legend", undefined, "Your answer"));
  for (const option of item.label_options) {
    const label = el("label");
    const radio = el("input");
    radio.type = "radio";
    radio.name = `label-${item.instance_id}`;
    radio.value = option;
    radio.checked = option === selected;
    radio.addEventListener("change", () =>
      handlers.onLabel(item.instance_id, option),
    );
    label.append(radio, document.createTextNode(` ${option}`));
    group.append(label);
  }
  return group;
}

function ratingGroup(
  item: BatchItem,
  slotId: string,
  selected: Rating | null,
  handlers: Handlers,
): HTMLElement {
  const group = el("fieldset", "ratings");
  group.append(el("legend", undefined, "Does it justify the answer?"));
  for (const rating of RATINGS) {
    const label = el("label");
    const radio = el("input");
    radio.type = "radio";
    radio.name = `rating-${item.instance_id}-${slotId}`;
    radio.value = rating;
    radio.checked = rating === selected;
    radio.addEventListener("change", () =>
      handlers.onRating(item.instance_id, slotId, rating),
    );
    label.append(radio, document.createTextNode(` ${RATING_LABELS[rating]}`));
    group.append(label);
  }
  return group;
}

function shortcomingGroup(
  item: BatchItem,
  slotId: string,
  selected: string[],
  handlers: Handlers,
): HTMLElement {
  const group = el("fieldset", "shortcomings");
  group.append(el("legend", undefined, "Shortcomings of the explanation"));
  for (const name of SHORTCOMINGS) {
    const label = el("label");
    const box = el("input");
    box.type = "checkbox";
    box.name = `shortcoming-${item.instance_id}-${slotId}`;
    box.value = name;
    box.checked = selected.includes(name);
    box.addEventListener("change", () =>
      handlers.onShortcoming(item.instance_id, slotId, name),
    );
    label.append(box, document.createTextNode(` ${SHORTCOMING_LABELS[name]}`));
    group.append(label);
  }
  return group;
}

export function renderItem(
  item: BatchItem,
  view: BatchView,
  handlers: Handlers,
): HTMLElement {
  const card = el("section", "item");
  card.dataset.item = item.instance_id;
  const problem = itemSchemaError(item);
  if (problem !== null) {
    card.classList.add("item-error");
    card.append(
      el("p", "error", `This item cannot be annotated: ${problem}.`),
    );
    return card;
  }
  const state = view.items.get(item.instance_id);
  card.append(taskPrompt(item));
  card.append(labelGroup(item, state?.label ?? null, handlers));
  item.nles.forEach((nle, index) => {
    const panel = el("div", "nle-panel");
    panel.dataset.slot = nle.slot_id;
    panel.tabIndex = 0;
    panel.append(
      el("h3", undefined, `Explanation ${String.fromCharCode(65 + index)}`),
      el("blockquote", "nle-text", nle.text),
    );
    const slotState = state?.slots[nle.slot_id];
    panel.append(
      ratingGroup(item, nle.slot_id, slotState?.rating ?? null, handlers),
    );
    panel.append(
      shortcomingGroup(
        item,
        nle.slot_id,
        slotState?.shortcomings ?? [],
        handlers,
      ),
    );
    // keyboard-first rating: 1..4 on a focused panel
    panel.addEventListener("keydown", (event) => {
      const index = Number.parseInt(event.key, 10) - 1;
      const rating = RATINGS[index];
      if (rating !== undefined) {
        handlers.onRating(item.instance_id, nle.slot_id, rating);
        event.preventDefault();
      }
    });
    card.append(panel);
  });
  return card;
}

export function renderBatch(
  view: BatchView,
  handlers: Handlers,
  onSubmit: () => void,
): HTMLElement {
  const container = el("div", "batch");
  container.append(
    el("h2", undefined, `Batch ${view.batch.batch_id}`),
    el(
      "p",
      "instructions",
      "Answer each task, then rate both explanations and mark their " +
        "shortcomings.",
    ),
  );
  for (const item of view.batch.items) {
    container.append(renderItem(item, view, handlers));
  }
  const button = el("button", "submit", "Submit batch");
  button.dataset.role = "submit";
  button.disabled = !view.complete();
  button.addEventListener("click", onSubmit);
  container.append(button);
  return container;
}

export function renderGateOutcome(
  outcome: GateOutcome,
  showGateDetails: boolean,
): HTMLElement {
  const panel = el("div", "gate-outcome");
  panel.dataset.role = "outcome";
  if (outcome.passed) {
    panel.classList.add("accepted");
    panel.append(el("h2", undefined, "Batch accepted"));
    panel.append(el("p", undefined, "Thank you! Your batch was recorded."));
  } else {
    panel.classList.add("rejected");
    panel.append(el("h2", undefined, "Batch not accepted"));
    panel.append(
      el(
        "p",
        undefined,
        "This batch did not meet the quality checks and will be " +
          "reassigned.",
      ),
    );
    if (showGateDetails) {
      const list = el("ul", "gate-failures");
      for (const failure of outcome.failures) {
        list.append(el("li", undefined, failure));
      }
      panel.append(list);
    }
  }
  return panel;
}

export function renderOffline(onRetry: () => void): HTMLElement {
  const panel = el("div", "offline");
  panel.dataset.role = "offline";
  panel.append(
    el("h2", undefined, "You appear to be offline"),
    el(
      "p",
      undefined,
      "Your answers are saved on this device and were not lost.",
    ),
  );
  const button = el("button", "retry", "Retry submission");
  button.dataset.role = "retry";
  button.addEventListener("click", onRetry);
  panel.append(button);
  return panel;
}

export function renderDone(): HTMLElement {
  const panel = el("div", "done");
  panel.dataset.role = "done";
  panel.append(
    el("h2", undefined, "No batches available"),
    el("p", undefined, "There is nothing assigned to you right now."),
  );
  return panel;
}
