/** Keeps each panel down to one live request and discards stale replies.
 *
 * Every `run` aborts the previous request and takes a fresh ticket; a reply
 * is applied only while its ticket is still the newest, so an older request
 * that resolves after a newer one can never overwrite the newer result.
 */

export class LatestGate {
  private ticket = 0;
  private controller: AbortController | null = null;

  run<T>(
    task: (signal: AbortSignal) => Promise<T>,
    apply: (value: T) => void,
    onError?: (err: unknown) => void,
  ): void {
    this.controller?.abort();
    this.controller = new AbortController();
    const mine = ++this.ticket;
    task(this.controller.signal).then(
      (value) => {
        if (mine === this.ticket) apply(value);
      },
      (err) => {
        if (mine !== this.ticket) return; // superseded: drop silently
        if (isAbortError(err)) return;
        onError?.(err);
      },
    );
  }

  /** Abort the in-flight request (if any) and invalidate its reply. */
  cancel(): void {
    this.controller?.abort();
    this.controller = null;
    this.ticket++;
  }
}

function isAbortError(err: unknown): boolean {
  return err instanceof DOMException && err.name === "AbortError";
}
