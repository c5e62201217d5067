/** Pure state container for the console; all rendering reads from here.
 *
 * The server is the only authority: this model never decides whether a
 * cancel or send is legal, it just mirrors what the gateway reports.
 * The rendered countdown counts down locally between server messages
 * but is clamped so it can never exceed the server-reported remainder.
 */

import {
  ConnectionState,
  DeliveryView,
  EngineStateName,
  EventRow,
  ServerMessage,
  StatusBody,
} from "./types.js";

export const MAX_EVENTS = 200;

export class ConsoleModel {
  connection: ConnectionState = "connecting";
  state: EngineStateName = "monitoring";
  cause: string | null = null;
  bpm: number | null = null;
  recentEvents: EventRow[] = [];
  deliveries: DeliveryView[] = [];
  notice: string | null = null;

  /** Full window of the running countdown (for ring geometry). */
  countdownTotalMs: number | null = null;

  private serverRemainingMs: number | null = null;
  private remainingObservedAt: number | null = null;
  private deadlineKey: number | null = null;
  private episodeId: string | null = null;

  /** Apply one live-stream message. nowMs is the local monotonic clock. */
  apply(msg: ServerMessage, nowMs: number): void {
    switch (msg.type) {
      case "heartbeat":
        return;
      case "snapshot":
        this.applyStatus(
          {
            state: msg.state ?? "monitoring",
            cause: msg.cause ?? null,
            bpm: msg.bpm ?? null,
            countdown_remaining_ms: msg.countdown_remaining_ms ?? null,
          },
          nowMs,
        );
        return;
      case "vital":
        this.bpm = (msg as { bpm?: number }).bpm ?? this.bpm;
        this.pushEvent(msg, `heart rate ${this.bpm} BPM`);
        return;
      case "motion":
        // 50 Hz; too chatty for the event list, shown only via state.
        return;
      case "fix":
        this.pushEvent(msg, "position fix");
        return;
      case "command":
        this.pushEvent(msg, `command: ${String(msg["op"] ?? "?")}`);
        return;
      case "transition":
        this.applyTransition(msg, nowMs);
        return;
      case "delivery":
        this.applyDelivery(msg);
        return;
      default:
        return;
    }
  }

  /** Apply a REST status body (command responses, reconnect probes). */
  applyStatus(status: StatusBody, nowMs: number): void {
    this.state = (status.state as EngineStateName) ?? "monitoring";
    this.cause = status.cause;
    if (status.bpm !== null && status.bpm !== undefined) {
      this.bpm = status.bpm;
    }
    if (this.state === "countdown" && status.countdown_remaining_ms !== null) {
      this.setRemaining(status.countdown_remaining_ms, nowMs, null);
    } else if (this.state !== "countdown") {
      this.clearCountdown();
    }
  }

  setConnection(state: ConnectionState): void {
    this.connection = state;
  }

  setNotice(text: string | null): void {
    this.notice = text;
  }

  /**
   * Remaining countdown in ms for rendering, or null when no countdown.
   * Monotone between server updates; never above the server's value.
   */
  renderedCountdownMs(nowMs: number): number | null {
    if (this.state !== "countdown" || this.serverRemainingMs === null) {
      return null;
    }
    const elapsed = this.remainingObservedAt === null ? 0 : nowMs - this.remainingObservedAt;
    return Math.max(0, this.serverRemainingMs - Math.max(0, elapsed));
  }

  private applyTransition(msg: ServerMessage, nowMs: number): void {
    const to = msg.to;
    if (!to) {
      return;
    }
    this.state = to.kind;
    this.cause = to.cause ?? null;
    if (to.kind === "countdown" && to.deadline_ms !== undefined && msg.t_ms !== undefined) {
      // New episode: a fresh countdown invalidates the old delivery panel.
      this.deliveries = [];
      this.episodeId = null;
      this.setRemaining(to.deadline_ms - msg.t_ms, nowMs, to.deadline_ms);
    } else {
      this.clearCountdown();
    }
    this.pushEvent(msg, `${msg.from?.kind ?? "?"} → ${to.kind} (${msg.reason ?? ""})`);
  }

  private applyDelivery(msg: ServerMessage): void {
    const eventId = msg.event_id ?? null;
    if (eventId !== this.episodeId) {
      this.episodeId = eventId;
      this.deliveries = [];
    }
    const view: DeliveryView = {
      sinkKind: msg.sink_kind ?? "?",
      status: msg.status ?? "?",
      attempts: msg.attempts ?? 0,
      lastError: msg.last_error ?? "",
    };
    const existing = this.deliveries.findIndex((d) => d.sinkKind === view.sinkKind);
    if (existing >= 0) {
      this.deliveries[existing] = view;
    } else {
      this.deliveries.push(view);
    }
    this.pushEvent(msg, `delivery ${view.sinkKind}: ${view.status}`);
  }

  private setRemaining(remainingMs: number, nowMs: number, deadlineKey: number | null): void {
    const sameCountdown =
      deadlineKey !== null && this.deadlineKey !== null && deadlineKey === this.deadlineKey;
    if (sameCountdown) {
      // Same deadline: only ever shrink, never extend client-side.
      const current = this.renderedCountdownMs(nowMs);
      if (current !== null && remainingMs > current) {
        return;
      }
    }
    this.serverRemainingMs = Math.max(0, remainingMs);
    this.remainingObservedAt = nowMs;
    if (!sameCountdown || this.countdownTotalMs === null) {
      this.countdownTotalMs = Math.max(this.countdownTotalMs ?? 0, this.serverRemainingMs);
    }
    if (deadlineKey !== null) {
      this.deadlineKey = deadlineKey;
    }
  }

  private clearCountdown(): void {
    this.serverRemainingMs = null;
    this.remainingObservedAt = null;
    this.deadlineKey = null;
    this.countdownTotalMs = null;
  }

  private pushEvent(msg: ServerMessage, summary: string): void {
    this.recentEvents.push({
      seq: msg.seq ?? 0,
      tMs: msg.t_ms ?? 0,
      kind: msg.type,
      summary,
    });
    if (this.recentEvents.length > MAX_EVENTS) {
      this.recentEvents.splice(0, this.recentEvents.length - MAX_EVENTS);
    }
  }
}
