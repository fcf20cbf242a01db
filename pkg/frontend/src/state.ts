// Client-side batch state: per-item selections, completion rules, and
// draft persistence. Validation mirrors the server's; the server stays
// authoritative.

import type { BatchItem, BatchPayload, WireRecord } from "./api.js";

export const RATINGS = ["yes", "weak_yes", "weak_no", "no"] as const;
export type Rating = (typeof RATINGS)[number];

export const RATING_LABELS: Record<Rating, string> = {
  yes: "Yes",
  weak_yes: "Weak Yes",
  weak_no: "Weak No",
  no: "No",
};

export const SHORTCOMINGS = [
  "does_not_make_sense",
  "insufficient_justification",
  "irrelevant",
  "too_trivial",
  "none",
] as const;

export const SHORTCOMING_LABELS: Record<string, string> = {
  does_not_make_sense: "does not make sense",
  insufficient_justification: "insufficient justification",
  irrelevant: "irrelevant to the task",
  too_trivial: "too trivial",
  none: "none of the above",
};

export interface SlotState {
  rating: Rating | null;
  shortcomings: string[];
}

export interface ItemState {
  label: string | null;
  slots: Record<string, SlotState>;
}

export interface Draft {
  batch_id: string;
  items: Record<string, ItemState>;
}

const KNOWN_TASKS: Record<string, string[]> = {
  winogrande: ["schema", "option1", "option2"],
  comve: ["statement1", "statement2"],
};

/** Why an item cannot be annotated, or null when it is well-formed. */
export function itemSchemaError(item: BatchItem): string | null {
  const required = KNOWN_TASKS[item.task];
  if (!required) {
    return `unknown task "${item.task}"`;
  }
  for (const field of required) {
    if (!item.task_fields[field]) {
      return `missing field "${field}"`;
    }
  }
  if (item.label_options.length < 2) {
    return "fewer than two label options";
  }
  const slotIds = item.nles.map((s) => s.slot_id);
  if (slotIds.length !== 2 || new Set(slotIds).size !== 2) {
    return "expected exactly two explanation slots";
  }
  if (item.nles.some((s) => !s.text)) {
    return "empty explanation text";
  }
  return null;
}

function emptyItemState(item: BatchItem): ItemState {
  const slots: Record<string, SlotState> = {};
  for (const slot of item.nles) {
    slots[slot.slot_id] = { rating: null, shortcomings: [] };
  }
  return { label: null, slots };
}

export class BatchView {
  readonly items = new Map<string, ItemState>();

  constructor(readonly batch: BatchPayload) {
    for (const item of batch.items) {
      this.items.set(item.instance_id, emptyItemState(item));
    }
  }

  private state(instanceId: string): ItemState {
    const state = this.items.get(instanceId);
    if (!state) {
      throw new Error(`unknown instance ${instanceId}`);
    }
    return state;
  }

  private slot(instanceId: string, slotId: string): SlotState {
    const slot = this.state(instanceId).slots[slotId];
    if (!slot) {
      throw new Error(`unknown slot ${slotId} on ${instanceId}`);
    }
    return slot;
  }

  setLabel(instanceId: string, label: string): void {
    this.state(instanceId).label = label;
  }

  setRating(instanceId: string, slotId: string, rating: Rating): void {
    this.slot(instanceId, slotId).rating = rating;
  }

  /** Check or uncheck one shortcoming; "none" excludes the other four. */
  toggleShortcoming(instanceId: string, slotId: string, name: string): void {
    const slot = this.slot(instanceId, slotId);
    if (slot.shortcomings.includes(name)) {
      slot.shortcomings = slot.shortcomings.filter((s) => s !== name);
    } else if (name === "none") {
      slot.shortcomings = ["none"];
    } else {
      slot.shortcomings = [
        ...slot.shortcomings.filter((s) => s !== "none"),
        name,
      ];
    }
  }

  itemComplete(item: BatchItem): boolean {
    if (itemSchemaError(item) !== null) {
      return false;
    }
    const state = this.state(item.instance_id);
    if (state.label === null) {
      return false;
    }
    return item.nles.every((nle) => {
      const slot = state.slots[nle.slot_id];
      return (
        slot !== undefined &&
        slot.rating !== null &&
        slot.shortcomings.length > 0
      );
    });
  }

  complete(): boolean {
    return this.batch.items.every((item) => this.itemComplete(item));
  }

  records(): WireRecord[] {
    if (!this.complete()) {
      throw new Error("batch is not complete");
    }
    return this.batch.items.map((item) => {
      const state = this.state(item.instance_id);
      const ratings: Record<string, string> = {};
      const shortcomings: Record<string, string[]> = {};
      for (const nle of item.nles) {
        const slot = state.slots[nle.slot_id];
        if (slot === undefined || slot.rating === null) {
          throw new Error(`incomplete slot ${nle.slot_id}`);
        }
        ratings[nle.slot_id] = slot.rating;
        shortcomings[nle.slot_id] = [...slot.shortcomings];
      }
      return {
        instance_id: item.instance_id,
        label: state.label as string,
        ratings,
        shortcomings,
      };
    });
  }

  toDraft(): Draft {
    const items: Record<string, ItemState> = {};
    for (const [id, state] of this.items) {
      items[id] = {
        label: state.label,
        slots: Object.fromEntries(
          Object.entries(state.slots).map(([slotId, slot]) => [
            slotId,
            { rating: slot.rating, shortcomings: [...slot.shortcomings] },
          ]),
        ),
      };
    }
    return { batch_id: this.batch.batch_id, items };
  }

  /** Re-apply a saved draft, keeping only values still valid for the batch. */
  restore(draft: Draft): void {
    if (draft.batch_id !== this.batch.batch_id) {
      return;
    }
    for (const item of this.batch.items) {
      const saved = draft.items[item.instance_id];
      if (!saved) {
        continue;
      }
      if (saved.label !== null && item.label_options.includes(saved.label)) {
        this.setLabel(item.instance_id, saved.label);
      }
      for (const nle of item.nles) {
        const slot = saved.slots[nle.slot_id];
        if (!slot) {
          continue;
        }
        if (slot.rating !== null && RATINGS.includes(slot.rating)) {
          this.setRating(item.instance_id, nle.slot_id, slot.rating);
        }
        for (const name of slot.shortcomings) {
          if ((SHORTCOMINGS as readonly string[]).includes(name)) {
            this.toggleShortcoming(item.instance_id, nle.slot_id, name);
          }
        }
      }
    }
  }
}

const DRAFT_KEY = "nlekit.draft";
const TOKEN_KEY = "nlekit.annotator";

export function saveDraft(storage: Storage, view: BatchView): void {
  storage.setItem(DRAFT_KEY, JSON.stringify(view.toDraft()));
}

export function loadDraft(storage: Storage): Draft | null {
  const raw = storage.getItem(DRAFT_KEY);
  if (raw === null) {
    return null;
  }
  try {
    return JSON.parse(raw) as Draft;
  } catch {
    return null;
  }
}

export function clearDraft(storage: Storage): void {
  storage.removeItem(DRAFT_KEY);
}

export function savedToken(storage: Storage): string | null {
  return storage.getItem(TOKEN_KEY);
}

export function saveToken(storage: Storage, token: string): void {
  storage.setItem(TOKEN_KEY, token);
}
