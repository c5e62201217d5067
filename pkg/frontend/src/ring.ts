/** Countdown ring geometry and label formatting (pure, DOM-free). */

export const RING_RADIUS = 54;
export const RING_CIRCUMFERENCE = 2 * Math.PI * RING_RADIUS;

/** stroke-dashoffset for an SVG circle: full ring at start, empty at 0. */
export function ringOffset(remainingMs: number, totalMs: number): number {
  if (totalMs <= 0) {
    return RING_CIRCUMFERENCE;
  }
  const fraction = Math.min(1, Math.max(0, remainingMs / totalMs));
  return RING_CIRCUMFERENCE * (1 - fraction);
}

/** "13.9" style label, tenth-of-a-second resolution, never negative. */
export function formatSeconds(remainingMs: number): string {
  return (Math.max(0, remainingMs) / 1000).toFixed(1);
}
