// Application wiring: one batch per session, optimistic draft saving,
// submit only when complete, retry without data loss when offline.

import { Client, OfflineError, type GateOutcome } from "./api.js";
import {
  renderBatch,
  renderDone,
  renderGateOutcome,
  renderOffline,
} from "./render.js";
import {
  BatchView,
  clearDraft,
  loadDraft,
  saveDraft,
  savedToken,
  saveToken,
  type Rating,
} from "./state.js";

export interface AppConfig {
  annotatorName: string;
  showGateDetails: boolean;
}

export function configFromSearch(search: string): AppConfig {
  const params = new URLSearchParams(search);
  return {
    annotatorName: params.get("name") ?? "annotator",
    showGateDetails: params.get("details") === "1",
  };
}

export class App {
  private view: BatchView | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: Client,
    private readonly storage: Storage,
    private readonly config: AppConfig,
  ) {}

  async start(): Promise<void> {
    let token = savedToken(this.storage);
    if (token === null) {
      token = await this.client.register(this.config.annotatorName);
      saveToken(this.storage, token);
    }
    const batch = await this.client.nextBatch(token);
    if (batch === null) {
      this.show(renderDone());
      return;
    }
    this.view = new BatchView(batch);
    const draft = loadDraft(this.storage);
    if (draft !== null) {
      this.view.restore(draft);
    }
    this.renderForm();
  }

  private show(node: HTMLElement): void {
    this.root.replaceChildren(node);
  }

  private renderForm(): void {
    if (this.view === null) {
      return;
    }
    const view = this.view;
    const rerender = () => {
      saveDraft(this.storage, view);
      this.renderForm();
    };
    this.show(
      renderBatch(
        view,
        {
          onLabel: (id, label) => {
            view.setLabel(id, label);
            rerender();
          },
          onRating: (id, slot, rating: Rating) => {
            view.setRating(id, slot, rating);
            rerender();
          },
          onShortcoming: (id, slot, name) => {
            view.toggleShortcoming(id, slot, name);
            rerender();
          },
        },
        () => void this.submit(),
      ),
    );
  }

  private async submit(): Promise<void> {
    if (this.view === null || !this.view.complete()) {
      return;
    }
    const token = savedToken(this.storage);
    if (token === null) {
      return;
    }
    // the draft stays saved until the service acknowledges
    saveDraft(this.storage, this.view);
    let outcome: GateOutcome;
    try {
      outcome = await this.client.submit(
        token,
        this.view.batch.batch_id,
        this.view.records(),
      );
    } catch (error) {
      if (error instanceof OfflineError) {
        this.show(renderOffline(() => void this.submit()));
        return;
      }
      throw error;
    }
    clearDraft(this.storage);
    this.view = null;
    this.show(renderGateOutcome(outcome, this.config.showGateDetails));
  }
}

export function boot(root: HTMLElement): void {
  const app = new App(
    root,
    new Client(""),
    window.localStorage,
    configFromSearch(window.location.search),
  );
  void app.start();
}
