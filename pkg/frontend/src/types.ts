/** Wire shapes of the gateway API the console consumes. */

export type EngineStateName =
  | "monitoring"
  | "suspected"
  | "countdown"
  | "triggered"
  | "cancelled";

export interface StatusBody {
  state: string;
  cause: string | null;
  bpm: number | null;
  countdown_remaining_ms: number | null;
}

export interface StateDict {
  kind: EngineStateName;
  cause?: string;
  count?: number;
  since_ms?: number;
  deadline_ms?: number;
  at_ms?: number;
}

/** One message from WS /api/v1/live. */
export interface ServerMessage {
  type: string;
  seq?: number;
  t_ms?: number;
  // snapshot fields
  state?: string;
  cause?: string | null;
  bpm?: number | null;
  countdown_remaining_ms?: number | null;
  // transition fields
  from?: StateDict;
  to?: StateDict;
  reason?: string;
  // delivery fields
  event_id?: string;
  sink_kind?: string;
  status?: string;
  attempts?: number;
  last_error?: string;
  [key: string]: unknown;
}

export interface DeliveryView {
  sinkKind: string;
  status: string;
  attempts: number;
  lastError: string;
}

export interface EventRow {
  seq: number;
  tMs: number;
  kind: string;
  summary: string;
}

export type ConnectionState = "connecting" | "live" | "disconnected";

export interface ContactsPayload {
  phone: string;
  email: string;
  social_webhook: string;
}

export interface FieldError {
  field: string;
  message: string;
}
