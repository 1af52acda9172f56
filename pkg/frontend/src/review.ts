import { ApiClient, ApiError } from "./api.js";
import { TagState } from "./state.js";
import type { History, RankedItem, Status } from "./types.js";

export interface ReviewCallbacks {
  onRanking?(items: RankedItem[], round: number): void;
  onStatus?(status: Status, busy: boolean): void;
  onHistory?(history: History): void;
  onError?(message: string): void;
}

/** Headless review-loop controller.
 *
 * Holds the uncommitted tags, submits feedback, and polls the service
 * until the fine-tune job completes, at which point the grid is refreshed
 * with the new ranking. Submission is disabled while a job is in flight
 * (local `busy` plus any phase the service reports as active) and while no
 * tags are set. All server mutations are funneled through one in-flight
 * request at a time.
 */
export class ReviewLoop {
  readonly tags: TagState;
  busy = false;
  round = 0;
  private timer: ReturnType<typeof setInterval> | null = null;
  private lastRanking: RankedItem[] = [];

  constructor(
    private api: ApiClient,
    private opts: { k: number; top: number; pollIntervalMs: number },
    private cb: ReviewCallbacks = {},
  ) {
    this.tags = new TagState(opts.k);
  }

  get ranking(): RankedItem[] {
    return this.lastRanking;
  }

  canSubmit(): boolean {
    return !this.busy && !this.tags.empty;
  }

  async refresh(): Promise<void> {
    try {
      const status = await this.api.getStatus();
      this.round = status.round;
      this.busy = status.phase === "fine-tuning" || status.phase === "training"
        || status.phase === "initial-detection";
      this.cb.onStatus?.(status, this.busy);
      if (status.phase === "ready" || status.phase === "fine-tuning") {
        const items = await this.api.getRanking(this.opts.top);
        this.lastRanking = items;
        this.tags.setPresented(items.map((it) => it.frame_id));
        this.cb.onRanking?.(items, this.round);
        this.cb.onHistory?.(await this.api.getHistory());
      }
    } catch (err) {
      this.cb.onError?.(err instanceof Error ? err.message : String(err));
    }
  }

  /** Submit the current tags; rejected while busy or with nothing tagged. */
  async submit(): Promise<boolean> {
    if (!this.canSubmit()) return false;
    const { anomalies, normals } = this.tags.selection();
    this.busy = true;
    try {
      await this.api.postFeedback(anomalies, normals);
      this.tags.clear();
      return true;
    } catch (err) {
      this.busy = false;
      if (err instanceof ApiError) {
        this.cb.onError?.(`${err.status}: ${err.message}`);
      } else {
        this.cb.onError?.(err instanceof Error ? err.message : String(err));
      }
      return false;
    }
  }

  /** One poll tick: read status; when a job we were waiting on completes,
   * pull the fresh ranking. */
  async poll(): Promise<void> {
    let status: Status;
    try {
      status = await this.api.getStatus();
    } catch (err) {
      this.cb.onError?.(err instanceof Error ? err.message : String(err));
      return;
    }
    const active =
      status.phase === "fine-tuning" ||
      status.phase === "training" ||
      status.phase === "initial-detection";
    this.cb.onStatus?.(status, this.busy || active);
    if (status.phase === "error") {
      this.busy = false;
      this.cb.onError?.(status.error ?? "run failed");
      return;
    }
    if (active) {
      this.busy = true;
      return;
    }
    const roundAdvanced = status.round !== this.round;
    if (status.phase === "ready" && (this.busy || roundAdvanced)) {
      this.busy = false;
      this.round = status.round;
      try {
        const items = await this.api.getRanking(this.opts.top);
        this.lastRanking = items;
        this.tags.setPresented(items.map((it) => it.frame_id));
        this.cb.onRanking?.(items, this.round);
        this.cb.onHistory?.(await this.api.getHistory());
      } catch (err) {
        this.cb.onError?.(err instanceof Error ? err.message : String(err));
      }
    }
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => {
      void this.poll();
    }, this.opts.pollIntervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
