/** Debounced, latest-wins render scheduling.
 *
 * Every state change restarts the debounce window; when it elapses, at
 * most one request is dispatched. While a request is in flight newer
 * changes wait their turn, and a response whose state has been superseded
 * is dropped on arrival, so the displayed frame always reflects the most
 * recent state the server has answered. Errors surface via onError and
 * leave the last good frame in place.
 */

import { ViewerState } from './state.js';

export interface RenderLoopOptions<F = Uint8Array> {
  render: (state: ViewerState) => Promise<F>;
  onFrame: (frame: F, state: ViewerState) => void;
  onError?: (message: string) => void;
  debounceMs?: number;
}

export class RenderLoop<F = Uint8Array> {
  private readonly debounceMs: number;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stateSeq = 0;
  private pending: ViewerState | null = null;
  private busy = false;
  private queued = false;

  constructor(private readonly opts: RenderLoopOptions<F>) {
    this.debounceMs = opts.debounceMs ?? 150;
  }

  get inFlight(): boolean {
    return this.busy;
  }

  /** Register a new desired state; a render follows after the debounce. */
  update(state: ViewerState): void {
    this.stateSeq += 1;
    this.pending = state;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      if (this.busy) {
        this.queued = true;
      } else {
        void this.dispatch();
      }
    }, this.debounceMs);
  }

  private async dispatch(): Promise<void> {
    const state = this.pending;
    if (state === null) return;
    const reqSeq = this.stateSeq;
    this.busy = true;
    try {
      const frame = await this.opts.render(state);
      if (reqSeq === this.stateSeq) {
        this.opts.onFrame(frame, state);
      }
    } catch (err) {
      this.opts.onError?.(err instanceof Error ? err.message : String(err));
    } finally {
      this.busy = false;
      if (this.queued) {
        this.queued = false;
        void this.dispatch();
      }
    }
  }
}
