/** DOM wiring: everything stateful lives in ConsoleModel, everything
 * legal/illegal is decided by the gateway's status codes. */

import { getStatus, postCommand, putContacts } from "./api.js";
import { LiveConnection, SocketLike } from "./live.js";
import { formatSeconds, RING_CIRCUMFERENCE, ringOffset } from "./ring.js";
import { ContactsPayload } from "./types.js";
import { ConsoleModel } from "./viewmodel.js";

function browserSocket(url: string): SocketLike {
  const ws = new WebSocket(url);
  const like: SocketLike = {
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
    close: () => ws.close(),
  };
  ws.onopen = () => like.onopen?.();
  ws.onmessage = (ev) => like.onmessage?.({ data: String(ev.data) });
  ws.onclose = () => like.onclose?.();
  ws.onerror = () => like.onerror?.();
  return like;
}

const BASE = "";
const RENDER_PERIOD_MS = 200; // 5 updates/s for the ring

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
};

const model = new ConsoleModel();

const banner = $("banner");
const stateBadge = $("state-badge");
const causeLabel = $("cause-label");
const bpmReadout = $("bpm-readout");
const ringGroup = $("ring-group");
const ringArc = document.getElementById("ring-arc") as unknown as SVGCircleElement;
const ringLabel = $("ring-label");
const noticeEl = $("notice");
const deliveriesBody = $("deliveries-body");
const eventsList = $("events-list");
const contactsResult = $("contacts-result");

let noticeTimer: number | null = null;

function showNotice(text: string): void {
  model.setNotice(text);
  if (noticeTimer !== null) {
    window.clearTimeout(noticeTimer);
  }
  noticeTimer = window.setTimeout(() => {
    model.setNotice(null);
    render();
  }, 4000);
  render();
}

async function command(action: "panic" | "cancel" | "send"): Promise<void> {
  try {
    const result = await postCommand(BASE, action);
    if (result.status === 409) {
      showNotice(`${action}: ${result.body.detail ?? "not allowed right now"}`);
    } else if (result.body.state) {
      model.applyStatus(result.body, performance.now());
    }
  } catch {
    showNotice(`${action} failed to reach the gateway; try again`);
  }
  render();
}

function render(): void {
  const now = performance.now();

  banner.hidden = model.connection === "live";
  banner.textContent =
    model.connection === "connecting" ? "connecting to gateway…" : "disconnected from gateway";
  banner.className = `banner ${model.connection}`;

  stateBadge.textContent = model.state;
  stateBadge.className = `badge state-${model.state}`;
  causeLabel.textContent = model.cause ? `cause: ${model.cause}` : "";
  bpmReadout.textContent = model.bpm === null ? "—" : `${model.bpm} BPM`;

  const remaining = model.renderedCountdownMs(now);
  if (remaining === null) {
    ringGroup.hidden = true;
  } else {
    ringGroup.hidden = false;
    const total = model.countdownTotalMs ?? remaining;
    ringArc.style.strokeDasharray = String(RING_CIRCUMFERENCE);
    ringArc.style.strokeDashoffset = String(ringOffset(remaining, total));
    ringLabel.textContent = formatSeconds(remaining);
  }

  noticeEl.hidden = model.notice === null;
  noticeEl.textContent = model.notice ?? "";

  deliveriesBody.replaceChildren(
    ...model.deliveries.map((d) => {
      const row = document.createElement("tr");
      for (const text of [d.sinkKind, d.status, String(d.attempts), d.lastError]) {
        const td = document.createElement("td");
        td.textContent = text;
        row.appendChild(td);
      }
      row.className = `delivery-${d.status}`;
      return row;
    }),
  );

  eventsList.replaceChildren(
    ...model.recentEvents
      .slice(-30)
      .reverse()
      .map((e) => {
        const li = document.createElement("li");
        li.textContent = `#${e.seq} t=${e.tMs}ms ${e.summary}`;
        return li;
      }),
  );
}

function wireButtons(): void {
  $("btn-panic").addEventListener("click", () => void command("panic"));
  $("btn-cancel").addEventListener("click", () => void command("cancel"));
  $("btn-send").addEventListener("click", () => void command("send"));

  $("contacts-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const payload: ContactsPayload = {
      phone: ($("contact-phone") as HTMLInputElement).value,
      email: ($("contact-email") as HTMLInputElement).value,
      social_webhook: ($("contact-webhook") as HTMLInputElement).value,
    };
    void putContacts(BASE, payload)
      .then((result) => {
        contactsResult.textContent =
          result.status === 200
            ? "saved"
            : result.errors.map((e) => `${e.field}: ${e.message}`).join("; ");
        contactsResult.className = result.status === 200 ? "ok" : "error";
      })
      .catch(() => {
        contactsResult.textContent = "gateway unreachable";
        contactsResult.className = "error";
      });
  });
}

function start(): void {
  wireButtons();

  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/api/v1/live`;
  const live = new LiveConnection(
    wsUrl,
    {
      onMessage: (msg) => {
        model.apply(msg, performance.now());
        render();
      },
      onConnection: (state) => {
        model.setConnection(state);
        if (state === "live") {
          // refresh from REST too so a reconnect can't miss a beat
          void getStatus(BASE).then((s) => {
            model.applyStatus(s, performance.now());
            render();
          });
        }
        render();
      },
    },
    {
      socketFactory: browserSocket,
      setTimer: (fn, ms) => window.setTimeout(fn, ms),
      clearTimer: (h) => window.clearTimeout(h as number),
    },
  );
  live.connect();

  window.setInterval(render, RENDER_PERIOD_MS);
  render();
}

start();
