// Portal controller: the actions behind the three dashboard panels.
// DOM-free so the whole workflow is testable headlessly; main.ts wires
// these to elements and the polling loop.

import { ApiError, NodeApi, type SharingEvent, type ViewResult } from "./api.js";
import {
  createAccessToken,
  openAccessToken,
  signChallenge,
  type ReferencePointer,
} from "./crypto.js";
import { PortalState, type KeyBlob } from "./state.js";

export interface LoginInput {
  handle: string;
  keyBlob: KeyBlob;
}

export class PortalController {
  constructor(readonly api: NodeApi, readonly state: PortalState) {}

  /** Challenge-response sign-in; the private key never leaves the page. */
  async login(input: LoginInput): Promise<void> {
    const identity = await this.api.identity(input.handle);
    await this.state.importKeys(
      input.keyBlob, identity.encryption_public_key, identity.signing_public_key,
    );
    const challenge = await this.api.challenge();
    const signature = await signChallenge(this.state.keys!.signingPrivate, challenge.nonce);
    const session = await this.api.login(input.handle, challenge.nonce, signature);
    this.api.setSession(session.session_token);
    this.state.handle = input.handle;
    this.state.identity = identity.encryption_public_key;
    await this.refreshPanels();
  }

  async logout(): Promise<void> {
    try {
      await this.api.logout();
    } finally {
      this.api.setSession(null);
      this.state.clear();
    }
  }

  async refreshPanels(): Promise<void> {
    const [mine, inbound] = await Promise.all([this.api.myShares(), this.api.sharedWithMe()]);
    this.state.myShares = mine.shares;
    this.state.sharedWithMe = inbound.shares;
  }

  /** One long-poll turn; refreshes panels when a grant-affecting event lands. */
  async pollOnce(waitMs = 8000): Promise<SharingEvent[]> {
    const batch = await this.api.events(this.state.eventsCursor, waitMs);
    const fresh = this.state.applyEvents(batch.events);
    if (fresh.some((e) => e.kind === "Granted" || e.kind === "Revoked")) {
      await this.refreshPanels();
    }
    return fresh;
  }

  /** Build the token locally (sign, then encrypt to the recipient) and
   *  submit the grant. */
  async share(recipientHandle: string, fhirPath: string, tokenName?: string,
              expiresAt?: number): Promise<string> {
    if (!this.state.keys || !this.state.identity) throw new Error("not logged in");
    const draft = await this.api.prepareShare(fhirPath, expiresAt);
    const recipient = await this.api.identity(recipientHandle);
    const token = await createAccessToken(
      draft.pointer,
      this.state.keys.signingPrivate,
      recipient.encryption_public_key,
      Math.floor(Date.now() / 1000),
    );
    const name = tokenName || draft.default_token_name;
    await this.api.share(recipientHandle, fhirPath, token, name, expiresAt);
    await this.refreshPanels();
    return name;
  }

  async revoke(recipientHandle: string, tokenName: string): Promise<void> {
    await this.api.revoke(recipientHandle, tokenName);
    await this.refreshPanels();
  }

  /** Open the stored envelope locally, then ask the node to fetch and log
   *  the read.  The decryption key never leaves the page. */
  async view(tokenName: string): Promise<ViewResult> {
    if (!this.state.keys) throw new Error("not logged in");
    const stored = await this.api.storedToken(tokenName);
    if (!stored.authorized) {
      throw new ApiError(403, "RevokedAccess", "grant has been revoked");
    }
    const pointer: ReferencePointer = await openAccessToken(
      stored.token,
      this.state.keys.encryptionPrivate,
      stored.grantor_signing_public_key,
      this.state.keys.encryptionPublicB64,
    );
    return this.api.view(tokenName, pointer);
  }
}
