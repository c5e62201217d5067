/** Reconnect backoff: 500 ms doubling to a 8 s ceiling, reset on success. */

export const BACKOFF_START_MS = 500;
export const BACKOFF_CAP_MS = 8000;

export class Backoff {
  private attempt = 0;

  nextDelayMs(): number {
    const delay = Math.min(BACKOFF_CAP_MS, BACKOFF_START_MS * 2 ** this.attempt);
    this.attempt += 1;
    return delay;
  }

  reset(): void {
    this.attempt = 0;
  }
}
