/** Thin REST client; the server's status codes are the source of truth. */

import { ContactsPayload, FieldError, StatusBody } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface CommandResult {
  status: number;
  body: StatusBody & { detail?: string; noop?: boolean };
}

export async function postCommand(
  base: string,
  action: "panic" | "cancel" | "send",
  fetchFn: FetchLike = fetch,
): Promise<CommandResult> {
  const resp = await fetchFn(`${base}/api/v1/${action}`, { method: "POST" });
  return { status: resp.status, body: await resp.json() };
}

export interface ContactsResult {
  status: number;
  errors: FieldError[];
}

export async function putContacts(
  base: string,
  contacts: ContactsPayload,
  fetchFn: FetchLike = fetch,
): Promise<ContactsResult> {
  const resp = await fetchFn(`${base}/api/v1/contacts`, {
    method: "PUT",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(contacts),
  });
  if (resp.status === 200) {
    return { status: 200, errors: [] };
  }
  const body = (await resp.json()) as { errors?: FieldError[] };
  return { status: resp.status, errors: body.errors ?? [] };
}

export async function getStatus(base: string, fetchFn: FetchLike = fetch): Promise<StatusBody> {
  const resp = await fetchFn(`${base}/api/v1/status`);
  return (await resp.json()) as StatusBody;
}
