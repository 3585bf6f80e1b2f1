// Portal session state.  Private keys live only here, in page memory, as
// WebCrypto handles; logout drops every reference.  The event feed is
// at-least-once, so newly delivered batches are de-duplicated by sequence
// before they reach a panel.

import type { GrantSummary, SharingEvent } from "./api.js";
import {
  importEncryptionPrivate,
  importSigningPrivate,
  type KeyMaterial,
} from "./crypto.js";

export interface SessionKeys {
  signingPrivate: CryptoKey;
  encryptionPrivate: CryptoKey;
  encryptionPublicB64: string;
  signingPublicB64: string;
}

export interface KeyBlob {
  encryption_private_key: string;
  signing_private_key: string;
}

export class PortalState {
  handle: string | null = null;
  identity: string | null = null; // own encryption public key
  keys: SessionKeys | null = null;

  eventsCursor = -1;
  events: SharingEvent[] = [];
  private seenSequences = new Set<number>();

  myShares: GrantSummary[] = [];
  sharedWithMe: GrantSummary[] = [];

  get loggedIn(): boolean {
    return this.handle !== null && this.keys !== null;
  }

  async importKeys(blob: KeyBlob, encryptionPublicB64: string, signingPublicB64: string): Promise<void> {
    this.keys = {
      signingPrivate: await importSigningPrivate(blob.signing_private_key),
      encryptionPrivate: await importEncryptionPrivate(blob.encryption_private_key),
      encryptionPublicB64,
      signingPublicB64,
    };
  }

  adoptGenerated(material: KeyMaterial): void {
    this.keys = {
      signingPrivate: material.signingPrivate,
      encryptionPrivate: material.encryptionPrivate,
      encryptionPublicB64: material.encryptionPublicB64,
      signingPublicB64: material.signingPublicB64,
    };
  }

  /** Merge a delivered batch; returns only the events not seen before,
   *  in sequence order, and advances the poll cursor. */
  applyEvents(batch: SharingEvent[]): SharingEvent[] {
    const fresh: SharingEvent[] = [];
    for (const event of [...batch].sort((a, b) => a.sequence - b.sequence)) {
      if (this.seenSequences.has(event.sequence)) continue;
      this.seenSequences.add(event.sequence);
      this.events.push(event);
      fresh.push(event);
      if (event.sequence > this.eventsCursor) this.eventsCursor = event.sequence;
    }
    return fresh;
  }

  /** Newest first, for the feed panel. */
  eventsForDisplay(): SharingEvent[] {
    return [...this.events].sort((a, b) => b.sequence - a.sequence);
  }

  clear(): void {
    this.handle = null;
    this.identity = null;
    this.keys = null;
    this.eventsCursor = -1;
    this.events = [];
    this.seenSequences = new Set();
    this.myShares = [];
    this.sharedWithMe = [];
  }
}
