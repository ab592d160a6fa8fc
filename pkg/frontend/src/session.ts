/**
 * Labeling session state machine.
 *
 * Pure logic, no DOM: polls server status, mirrors the active batch,
 * holds local label choices for the ids the server still wants, and
 * submits them. The server is the source of truth — a page reload
 * rebuilds everything from /api/status and /api/batch, and ids already
 * accepted server-side simply stop being pending.
 */

import {
  ApiClient,
  ApiError,
  PendingItem,
  Rejection,
  SubmitOutcome,
} from "./api.js";

export type ViewPhase =
  | "connecting"
  | "waiting"
  | "labeling"
  | "training"
  | "done"
  | "error";

const PHASE_MAP: Record<string, ViewPhase> = {
  idle: "waiting",
  labeling: "labeling",
  training: "training",
  done: "done",
};

export class LabelingSession {
  phase: ViewPhase = "connecting";
  round = -1;
  labelWords: string[] = [];
  items: PendingItem[] = [];
  pendingIds = new Set<number>();
  choices = new Map<number, number>();
  rejections: Rejection[] = [];
  lastError: string | null = null;

  constructor(private readonly api: ApiClient) {}

  /** Fetch the label vocabulary; must succeed before labeling. */
  async connect(): Promise<void> {
    this.labelWords = await this.api.labelset();
  }

  /**
   * Resynchronize with the server. Safe to call from a poll loop; on
   * network failure the session enters the retriable "error" phase and
   * keeps its local choices.
   */
  async refresh(): Promise<void> {
    let status;
    try {
      status = await this.api.status();
    } catch (err) {
      this.phase = "error";
      this.lastError = err instanceof Error ? err.message : String(err);
      return;
    }
    this.lastError = null;
    const phase = PHASE_MAP[status.phase] ?? "waiting";
    const roundChanged = status.round !== this.round;
    this.round = status.round;
    this.pendingIds = new Set(status.pending_ids);

    if (phase === "labeling") {
      if (roundChanged || this.items.length === 0) {
        this.items = await this.api.batch();
        this.choices.clear();
        this.rejections = [];
      }
      // drop choices for ids that stopped being part of the batch
      const batchIds = new Set(this.items.map((item) => item.id));
      for (const id of [...this.choices.keys()]) {
        if (!batchIds.has(id)) {
          this.choices.delete(id);
        }
      }
    } else {
      this.items = [];
      this.choices.clear();
    }
    this.phase = phase;
  }

  /**
   * Record a local label choice. Returns false (and stores nothing) for
   * ids outside the pending set or labels outside the declared label
   * set, so an invalid value can never reach the server.
   */
  choose(id: number, label: number): boolean {
    if (!Number.isInteger(label) || label < 0 || label >= this.labelWords.length) {
      return false;
    }
    if (!this.pendingIds.has(id)) {
      return false;
    }
    this.choices.set(id, label);
    return true;
  }

  /** Items the server still wants, in batch order. */
  pendingItems(): PendingItem[] {
    return this.items.filter((item) => this.pendingIds.has(item.id));
  }

  readyToSubmit(): boolean {
    if (this.phase !== "labeling" || this.pendingIds.size === 0) {
      return false;
    }
    return [...this.pendingIds].every((id) => this.choices.has(id));
  }

  /**
   * Send every pending choice. Per-id rejections are kept for display
   * without losing local state; a transport error flips to the error
   * phase. Ends with a refresh so the view tracks the server.
   */
  async submit(): Promise<SubmitOutcome | null> {
    const payload = [...this.choices.entries()]
      .filter(([id]) => this.pendingIds.has(id))
      .map(([id, label]) => ({ id, label }));
    if (payload.length === 0) {
      return null;
    }
    let outcome: SubmitOutcome;
    try {
      outcome = await this.api.submitLabels(payload);
    } catch (err) {
      if (err instanceof ApiError && err.httpStatus === 409) {
        // round already advanced under us; resync silently
        await this.refresh();
        return null;
      }
      this.phase = "error";
      this.lastError = err instanceof Error ? err.message : String(err);
      return null;
    }
    this.rejections = outcome.rejected;
    await this.refresh();
    return outcome;
  }
}
