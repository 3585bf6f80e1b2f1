// DOM wiring for the portal: login screen, then a three-panel dashboard
// (recent sharing events; shares I created; shares made to me).

import { ApiError, NodeApi, type SharingEvent } from "./api.js";
import { PortalController } from "./app.js";
import { PortalState, type KeyBlob } from "./state.js";

const state = new PortalState();
const api = new NodeApi("");
const controller = new PortalController(api, state);

let pollTimer: number | undefined;

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

function show(id: string, visible: boolean): void {
  el(id).classList.toggle("hidden", !visible);
}

function setText(id: string, text: string): void {
  el(id).textContent = text;
}

function describeEvent(event: SharingEvent): string {
  const when = new Date(event.at * 1000).toISOString().replace("T", " ").slice(0, 19);
  const name = event.token_name ? ` "${event.token_name}"` : "";
  return `${when}  ${event.kind}${name}`;
}

function renderEvents(): void {
  const list = el<HTMLUListElement>("events-list");
  list.replaceChildren();
  const events = state.eventsForDisplay();
  show("events-empty", events.length === 0);
  for (const event of events.slice(0, 50)) {
    const item = document.createElement("li");
    item.className = `event event-${event.kind.toLowerCase()}`;
    item.textContent = describeEvent(event);
    list.appendChild(item);
  }
}

function renderMyShares(): void {
  const list = el<HTMLUListElement>("my-shares-list");
  list.replaceChildren();
  show("my-shares-empty", state.myShares.length === 0);
  for (const share of state.myShares) {
    const item = document.createElement("li");
    const label = document.createElement("span");
    label.textContent = `${share.token_name} → ${share.counterparty}`;
    label.className = share.authorized ? "active" : "revoked";
    item.appendChild(label);
    if (share.authorized) {
      const button = document.createElement("button");
      button.textContent = "revoke";
      button.addEventListener("click", async () => {
        button.disabled = true;
        try {
          await controller.revoke(share.counterparty, share.token_name);
          renderPanels();
        } catch (err) {
          reportError(err);
          button.disabled = false;
        }
      });
      item.appendChild(button);
    } else {
      const badge = document.createElement("em");
      badge.textContent = "revoked";
      item.appendChild(badge);
    }
    list.appendChild(item);
  }
}

function renderSharedWithMe(): void {
  const list = el<HTMLUListElement>("inbound-list");
  list.replaceChildren();
  show("inbound-empty", state.sharedWithMe.length === 0);
  for (const share of state.sharedWithMe) {
    const item = document.createElement("li");
    const label = document.createElement("span");
    label.textContent = `${share.token_name} ← ${share.counterparty}`;
    label.className = share.authorized ? "active" : "revoked";
    item.appendChild(label);
    const button = document.createElement("button");
    button.textContent = "view data";
    button.disabled = !share.authorized;
    if (!share.authorized) button.title = "access has been revoked";
    button.addEventListener("click", async () => {
      try {
        const result = await controller.view(share.token_name);
        setText("viewer-title", `${share.token_name} from ${result.sender_handle}`);
        const badge = el("viewer-integrity");
        badge.textContent = result.integrity;
        badge.className = `badge badge-${result.integrity.toLowerCase()}`;
        el("viewer-body").textContent = JSON.stringify(result.resource, null, 2);
        show("viewer", true);
      } catch (err) {
        reportError(err);
      }
    });
    item.appendChild(button);
    list.appendChild(item);
  }
}

function renderPanels(): void {
  renderEvents();
  renderMyShares();
  renderSharedWithMe();
}

function reportError(err: unknown): void {
  const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
  setText("error-bar", message);
  show("error-bar", true);
  window.setTimeout(() => show("error-bar", false), 6000);
  if (err instanceof ApiError && err.status === 401 && state.loggedIn) {
    // session expired mid-use: back to login with state cleared
    stopPolling();
    state.clear();
    api.setSession(null);
    show("dashboard", false);
    show("login-screen", true);
  }
}

function startPolling(): void {
  const loop = async () => {
    try {
      const fresh = await controller.pollOnce(8000);
      if (fresh.length) renderPanels();
      show("reconnect-bar", false);
    } catch {
      show("reconnect-bar", true);
    }
    pollTimer = window.setTimeout(loop, 1000);
  };
  pollTimer = window.setTimeout(loop, 0);
}

function stopPolling(): void {
  if (pollTimer !== undefined) window.clearTimeout(pollTimer);
  pollTimer = undefined;
}

function parseKeyBlob(raw: string): KeyBlob {
  const parsed = JSON.parse(raw);
  if (!parsed.encryption_private_key || !parsed.signing_private_key) {
    throw new Error("key blob needs encryption_private_key and signing_private_key");
  }
  return parsed;
}

async function onLogin(): Promise<void> {
  const handle = el<HTMLInputElement>("login-handle").value.trim();
  try {
    const keyBlob = parseKeyBlob(el<HTMLTextAreaElement>("login-keys").value);
    await controller.login({ handle, keyBlob });
  } catch (err) {
    setText("login-error", err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
    show("login-error", true);
    return;
  }
  show("login-error", false);
  show("login-screen", false);
  show("dashboard", true);
  setText("session-handle", handle);
  renderPanels();
  startPolling();
}

async function onShare(): Promise<void> {
  const recipient = el<HTMLInputElement>("share-recipient").value.trim();
  const path = el<HTMLInputElement>("share-path").value.trim();
  const name = el<HTMLInputElement>("share-name").value.trim() || undefined;
  const expiresRaw = el<HTMLInputElement>("share-expires").value.trim();
  const expiresAt = expiresRaw ? Math.floor(new Date(expiresRaw).getTime() / 1000) : undefined;
  try {
    await controller.share(recipient, path, name, expiresAt);
    show("share-error", false);
    el<HTMLInputElement>("share-name").value = "";
    renderPanels();
  } catch (err) {
    setText("share-error", err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
    show("share-error", true);
  }
}

function wireUp(): void {
  el("login-button").addEventListener("click", () => void onLogin());
  el("share-button").addEventListener("click", () => void onShare());
  el("logout-button").addEventListener("click", async () => {
    stopPolling();
    await controller.logout();
    show("dashboard", false);
    show("viewer", false);
    show("login-screen", true);
  });
  el("viewer-close").addEventListener("click", () => show("viewer", false));
}

document.addEventListener("DOMContentLoaded", wireUp);
