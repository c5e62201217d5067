/** WebSocket subscription with watchdog and reconnect.
 *
 * The server interleaves heartbeats into quiet streams; if nothing at
 * all arrives within the watchdog window the connection is declared
 * dead, a banner state is reported, and reconnection starts with
 * backoff. On every (re)connect the server sends a snapshot first, so
 * the model is never left rendering stale data as live.
 */

import { Backoff } from "./backoff.js";
import { ConnectionState, ServerMessage } from "./types.js";

export const WATCHDOG_MS = 2000;

export interface SocketLike {
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  close(): void;
}

export interface LiveOptions {
  socketFactory: (url: string) => SocketLike;
  setTimer: (fn: () => void, ms: number) => unknown;
  clearTimer: (handle: unknown) => void;
  watchdogMs?: number;
}

export interface LiveHandlers {
  onMessage: (msg: ServerMessage) => void;
  onConnection: (state: ConnectionState) => void;
}

export class LiveConnection {
  private socket: SocketLike | null = null;
  private watchdog: unknown = null;
  private reconnectTimer: unknown = null;
  private backoff = new Backoff();
  private closed = false;
  private readonly watchdogMs: number;

  constructor(
    private readonly url: string,
    private readonly handlers: LiveHandlers,
    private readonly opts: LiveOptions,
  ) {
    this.watchdogMs = opts.watchdogMs ?? WATCHDOG_MS;
  }

  connect(): void {
    if (this.closed) {
      return;
    }
    this.handlers.onConnection("connecting");
    const socket = this.opts.socketFactory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.armWatchdog();
    };
    socket.onmessage = (event) => {
      this.backoff.reset();
      this.armWatchdog();
      this.handlers.onConnection("live");
      let msg: ServerMessage;
      try {
        msg = JSON.parse(event.data) as ServerMessage;
      } catch {
        return;
      }
      this.handlers.onMessage(msg);
    };
    socket.onclose = () => this.dropped();
    socket.onerror = () => this.dropped();
  }

  close(): void {
    this.closed = true;
    this.disarmWatchdog();
    if (this.reconnectTimer !== null) {
      this.opts.clearTimer(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.socket?.close();
    this.socket = null;
  }

  private dropped(): void {
    if (this.closed) {
      return;
    }
    this.disarmWatchdog();
    if (this.socket) {
      const s = this.socket;
      this.socket = null;
      s.onclose = null;
      s.onerror = null;
      s.close();
    }
    this.handlers.onConnection("disconnected");
    if (this.reconnectTimer !== null) {
      return;
    }
    const delay = this.backoff.nextDelayMs();
    this.reconnectTimer = this.opts.setTimer(() => {
      this.reconnectTimer = null;
      this.connect();
    }, delay);
  }

  private armWatchdog(): void {
    this.disarmWatchdog();
    this.watchdog = this.opts.setTimer(() => this.dropped(), this.watchdogMs);
  }

  private disarmWatchdog(): void {
    if (this.watchdog !== null) {
      this.opts.clearTimer(this.watchdog);
      this.watchdog = null;
    }
  }
}
