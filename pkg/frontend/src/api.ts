// Typed client for the node's HTTP/JSON API.  The fetch implementation is
// injectable so tests can capture or fake the wire.

import type { ReferencePointer } from "./crypto.js";

export interface SharingEvent {
  kind: "Registered" | "KeyRotated" | "Granted" | "Revoked" | "TokenConsumed";
  actor: string;
  subject: string;
  token_name: string;
  sequence: number;
  at: number;
}

export interface GrantSummary {
  token_name: string;
  counterparty: string;
  authorized: boolean;
  updated_at: number;
}

export interface StoredToken {
  token_name: string;
  authorized: boolean;
  token: string;
  grantor_handle: string;
  grantor_signing_public_key: string;
  updated_at: number;
}

export interface IdentityInfo {
  handle: string;
  encryption_public_key: string;
  signing_public_key: string;
  registered_at: number;
}

export interface ViewResult {
  resource: Record<string, unknown>;
  integrity: "Verified" | "HashMismatch";
  sender_handle: string;
  token_name: string;
}

export interface PointerDraft {
  pointer: ReferencePointer;
  resource_type: string;
  default_token_name: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly code: string, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class NodeApi {
  private sessionToken: string | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  setSession(token: string | null): void {
    this.sessionToken = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.sessionToken) headers["authorization"] = `Bearer ${this.sessionToken}`;
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const data = text ? JSON.parse(text) : {};
    if (!response.ok) {
      throw new ApiError(response.status, data.code ?? "Unknown", data.message ?? text);
    }
    return data as T;
  }

  register(handle: string, encryptionPublicKey: string, signingPublicKey: string) {
    return this.request<{ registered: boolean }>("POST", "/register", {
      handle,
      encryption_public_key: encryptionPublicKey,
      signing_public_key: signingPublicKey,
    });
  }

  challenge() {
    return this.request<{ nonce: string; issued_at: number; ttl_seconds: number }>("GET", "/challenge");
  }

  login(handle: string, nonce: string, signature: string) {
    return this.request<{ session_token: string; expires_at: number }>("POST", "/login", {
      handle, nonce, signature,
    });
  }

  logout() {
    return this.request<{ ok: boolean }>("POST", "/logout");
  }

  whoami() {
    return this.request<{ identity: string; handle: string }>("GET", "/whoami");
  }

  identity(handle: string) {
    return this.request<IdentityInfo>("GET", `/identities/${encodeURIComponent(handle)}`);
  }

  prepareShare(fhirPath: string, expiresAt?: number) {
    return this.request<PointerDraft>("POST", "/share/prepare", {
      fhir_path: fhirPath, expires_at: expiresAt ?? null,
    });
  }

  share(recipientHandle: string, fhirPath: string, token: string, tokenName: string, expiresAt?: number) {
    return this.request<{ token_name: string; sequence: number }>("POST", "/share", {
      recipient_handle: recipientHandle,
      fhir_path: fhirPath,
      token,
      token_name: tokenName,
      expires_at: expiresAt ?? null,
    });
  }

  revoke(recipientHandle: string, tokenName: string) {
    return this.request<{ sequence: number }>("POST", "/revoke", {
      recipient_handle: recipientHandle, token_name: tokenName,
    });
  }

  myShares() {
    return this.request<{ shares: GrantSummary[] }>("GET", "/my-shares");
  }

  sharedWithMe() {
    return this.request<{ shares: GrantSummary[] }>("GET", "/shared-with-me");
  }

  storedToken(tokenName: string) {
    return this.request<StoredToken>("GET", `/tokens/${encodeURIComponent(tokenName)}`);
  }

  view(tokenName: string, referencePointer: ReferencePointer) {
    return this.request<ViewResult>("POST", "/view", {
      token_name: tokenName, reference_pointer: referencePointer,
    });
  }

  events(sinceSequence: number, waitMs = 0) {
    return this.request<{ events: SharingEvent[] }>(
      "GET", `/events?since_sequence=${sinceSequence}&wait_ms=${waitMs}`,
    );
  }
}
