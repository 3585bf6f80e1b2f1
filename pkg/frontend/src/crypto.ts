// Browser-side cryptography for the portal, via WebCrypto only.
//
// Wire formats mirror the node exactly: canonical JSON is key-sorted and
// whitespace-free, binary fields are unpadded base64url, public keys are
// SPKI DER, private keys PKCS8 DER, signatures raw 64-byte r||s.  The
// access-token envelope is ECDH(P-256) + HKDF-SHA256 + AES-256-GCM over a
// signed reference pointer, with the canonical header bound as AAD.

export const ENVELOPE_VERSION = 1;
export const SIG_SCHEME = "ecdsa-p256-sha256";
export const ENC_SCHEME = "ecies-p256-hkdf-sha256-aes256gcm";
const HKDF_INFO_PREFIX = "careledger-envelope-v1";

const subtle = globalThis.crypto.subtle;
const encoder = new TextEncoder();
const decoder = new TextDecoder();

export interface ReferencePointer {
  base_url: string;
  path: string;
  data_hash: string;
  created_by: string;
  expires_at?: number;
}

export interface Envelope {
  v: number;
  enc: string;
  sig: string;
  sender_hint: string;
  rp_digest: string;
  created_at: number;
  epk: string;
  nonce: string;
  ct: string;
}

export class CryptoFailure extends Error {
  constructor(readonly code: "DecryptionFailed" | "SignatureInvalid", message: string) {
    super(message);
  }
}

// ---- canonical JSON (must byte-match the node's serializer) ----

export function canonicalJson(value: unknown): string {
  if (value === null || typeof value === "boolean" || typeof value === "string") {
    return JSON.stringify(value);
  }
  if (typeof value === "number") {
    if (!Number.isInteger(value)) throw new Error("only integers are canonical");
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  if (typeof value === "object") {
    const entries = Object.keys(value as Record<string, unknown>)
      .sort()
      .map((k) => JSON.stringify(k) + ":" + canonicalJson((value as Record<string, unknown>)[k]));
    return "{" + entries.join(",") + "}";
  }
  throw new Error(`unsupported value in canonical JSON: ${typeof value}`);
}

export function canonicalBytes(value: unknown): Uint8Array {
  return encoder.encode(canonicalJson(value));
}

// ---- encoding helpers ----

export function b64uEncode(data: Uint8Array): string {
  let binary = "";
  for (const byte of data) binary += String.fromCharCode(byte);
  return btoa(binary).replace(/\+/g, "-").replace(/\//g, "_").replace(/=+$/, "");
}

export function b64uDecode(text: string): Uint8Array {
  const padded = text.replace(/-/g, "+").replace(/_/g, "/") + "=".repeat((4 - (text.length % 4)) % 4);
  const binary = atob(padded);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

export async function sha256Hex(data: Uint8Array): Promise<string> {
  const digest = new Uint8Array(await subtle.digest("SHA-256", data as BufferSource));
  return Array.from(digest, (b) => b.toString(16).padStart(2, "0")).join("");
}

// ---- key import/export ----

export async function importSigningPrivate(pkcs8b64u: string): Promise<CryptoKey> {
  return subtle.importKey("pkcs8", b64uDecode(pkcs8b64u) as BufferSource,
    { name: "ECDSA", namedCurve: "P-256" }, false, ["sign"]);
}

export async function importSigningPublic(spkib64u: string): Promise<CryptoKey> {
  return subtle.importKey("spki", b64uDecode(spkib64u) as BufferSource,
    { name: "ECDSA", namedCurve: "P-256" }, true, ["verify"]);
}

export async function importEncryptionPrivate(pkcs8b64u: string): Promise<CryptoKey> {
  return subtle.importKey("pkcs8", b64uDecode(pkcs8b64u) as BufferSource,
    { name: "ECDH", namedCurve: "P-256" }, false, ["deriveBits"]);
}

export async function importEncryptionPublic(spkib64u: string): Promise<CryptoKey> {
  return subtle.importKey("spki", b64uDecode(spkib64u) as BufferSource,
    { name: "ECDH", namedCurve: "P-256" }, true, []);
}

export async function exportPublic(key: CryptoKey): Promise<string> {
  return b64uEncode(new Uint8Array(await subtle.exportKey("spki", key)));
}

export interface KeyMaterial {
  signingPrivate: CryptoKey;
  encryptionPrivate: CryptoKey;
  signingPublicB64: string;
  encryptionPublicB64: string;
}

export async function generateKeyMaterial(): Promise<KeyMaterial> {
  const signing = await subtle.generateKey({ name: "ECDSA", namedCurve: "P-256" }, true, ["sign", "verify"]);
  const encryption = await subtle.generateKey({ name: "ECDH", namedCurve: "P-256" }, true, ["deriveBits"]);
  return {
    signingPrivate: signing.privateKey,
    encryptionPrivate: encryption.privateKey,
    signingPublicB64: await exportPublic(signing.publicKey),
    encryptionPublicB64: await exportPublic(encryption.publicKey),
  };
}

// ---- signing ----

export async function sign(privateKey: CryptoKey, data: Uint8Array): Promise<Uint8Array> {
  const sig = await subtle.sign({ name: "ECDSA", hash: "SHA-256" }, privateKey, data as BufferSource);
  return new Uint8Array(sig); // already raw r||s
}

export async function verify(publicKey: CryptoKey, signature: Uint8Array, data: Uint8Array): Promise<boolean> {
  if (signature.length !== 64) return false;
  return subtle.verify({ name: "ECDSA", hash: "SHA-256" }, publicKey,
    signature as BufferSource, data as BufferSource);
}

// ---- hybrid encryption ----

async function deriveAesKey(
  ecdhPrivate: CryptoKey, peerPublic: CryptoKey, epkDer: Uint8Array, recipientDer: Uint8Array,
): Promise<CryptoKey> {
  const shared = await subtle.deriveBits({ name: "ECDH", public: peerPublic }, ecdhPrivate, 256);
  const ikm = await subtle.importKey("raw", shared, "HKDF", false, ["deriveKey"]);
  const info = new Uint8Array(HKDF_INFO_PREFIX.length + epkDer.length + recipientDer.length);
  info.set(encoder.encode(HKDF_INFO_PREFIX), 0);
  info.set(epkDer, HKDF_INFO_PREFIX.length);
  info.set(recipientDer, HKDF_INFO_PREFIX.length + epkDer.length);
  return subtle.deriveKey(
    { name: "HKDF", hash: "SHA-256", salt: new Uint8Array(0), info: info as BufferSource },
    ikm,
    { name: "AES-GCM", length: 256 },
    false,
    ["encrypt", "decrypt"],
  );
}

function signedCore(payloadB64: string, sender: string): Uint8Array {
  return canonicalBytes({ payload: payloadB64, sender });
}

export async function createAccessToken(
  rp: ReferencePointer,
  senderSigningPrivate: CryptoKey,
  recipientEncryptionPublicB64: string,
  createdAt: number,
): Promise<string> {
  const rpBytes = canonicalBytes(rp as unknown as Record<string, unknown>);
  const payloadB64 = b64uEncode(rpBytes);
  const senderHint = rp.created_by;
  const signature = await sign(senderSigningPrivate, signedCore(payloadB64, senderHint));
  const signed = { payload: payloadB64, sender: senderHint, signature: b64uEncode(signature) };

  const header = {
    v: ENVELOPE_VERSION,
    enc: ENC_SCHEME,
    sig: SIG_SCHEME,
    sender_hint: senderHint,
    rp_digest: await sha256Hex(rpBytes),
    created_at: createdAt,
  };

  const recipientPublic = await importEncryptionPublic(recipientEncryptionPublicB64);
  const ephemeral = await subtle.generateKey({ name: "ECDH", namedCurve: "P-256" }, true, ["deriveBits"]);
  const epkDer = new Uint8Array(await subtle.exportKey("spki", ephemeral.publicKey));
  const recipientDer = b64uDecode(recipientEncryptionPublicB64);
  const aesKey = await deriveAesKey(ephemeral.privateKey, recipientPublic, epkDer, recipientDer);
  const nonce = globalThis.crypto.getRandomValues(new Uint8Array(12));
  const ct = new Uint8Array(await subtle.encrypt(
    { name: "AES-GCM", iv: nonce, additionalData: canonicalBytes(header) as BufferSource },
    aesKey,
    canonicalBytes(signed) as BufferSource,
  ));
  return canonicalJson({
    ...header,
    epk: b64uEncode(epkDer),
    nonce: b64uEncode(nonce),
    ct: b64uEncode(ct),
  });
}

export function parseEnvelope(token: string): Envelope {
  let env: Envelope;
  try {
    env = JSON.parse(token);
  } catch {
    throw new CryptoFailure("DecryptionFailed", "token is not a valid envelope");
  }
  if (env.v !== ENVELOPE_VERSION || env.enc !== ENC_SCHEME || env.sig !== SIG_SCHEME) {
    throw new CryptoFailure("DecryptionFailed", "unsupported envelope version or scheme");
  }
  for (const field of ["sender_hint", "rp_digest", "epk", "nonce", "ct"] as const) {
    if (typeof env[field] !== "string" || !env[field]) {
      throw new CryptoFailure("DecryptionFailed", `envelope missing field ${field}`);
    }
  }
  return env;
}

export async function openAccessToken(
  token: string,
  recipientEncryptionPrivate: CryptoKey,
  senderSigningPublicB64: string,
  recipientEncryptionPublicB64: string,
): Promise<ReferencePointer> {
  const env = parseEnvelope(token);
  const aad = canonicalBytes({
    v: env.v, enc: env.enc, sig: env.sig,
    sender_hint: env.sender_hint, rp_digest: env.rp_digest, created_at: env.created_at,
  });

  let plaintext: Uint8Array;
  try {
    const epkDer = b64uDecode(env.epk);
    const ephemeralPublic = await subtle.importKey("spki", epkDer as BufferSource,
      { name: "ECDH", namedCurve: "P-256" }, false, []);
    // the key derivation binds our own public key; the session knows it
    const recipientDer = b64uDecode(recipientEncryptionPublicB64);
    const aesKey = await deriveAesKey(recipientEncryptionPrivate, ephemeralPublic, epkDer, recipientDer);
    plaintext = new Uint8Array(await subtle.decrypt(
      { name: "AES-GCM", iv: b64uDecode(env.nonce) as BufferSource, additionalData: aad as BufferSource },
      aesKey,
      b64uDecode(env.ct) as BufferSource,
    ));
  } catch (err) {
    if (err instanceof CryptoFailure) throw err;
    throw new CryptoFailure("DecryptionFailed", `token cannot be decrypted: ${err}`);
  }

  let signed: { payload: string; sender: string; signature: string };
  try {
    signed = JSON.parse(decoder.decode(plaintext));
  } catch {
    throw new CryptoFailure("DecryptionFailed", "envelope interior malformed");
  }
  if (signed.sender !== env.sender_hint) {
    throw new CryptoFailure("SignatureInvalid", "signed sender does not match envelope header");
  }
  const senderKey = await importSigningPublic(senderSigningPublicB64);
  const ok = await verify(senderKey, b64uDecode(signed.signature), signedCore(signed.payload, signed.sender));
  if (!ok) {
    throw new CryptoFailure("SignatureInvalid", "pointer signature does not verify against sender");
  }
  const rpBytes = b64uDecode(signed.payload);
  if ((await sha256Hex(rpBytes)) !== env.rp_digest) {
    throw new CryptoFailure("SignatureInvalid", "pointer digest does not match envelope header");
  }
  const rp = JSON.parse(decoder.decode(rpBytes)) as ReferencePointer;
  if (rp.created_by !== signed.sender) {
    throw new CryptoFailure("SignatureInvalid", "pointer creator does not match signer");
  }
  return rp;
}

export async function signChallenge(signingPrivate: CryptoKey, nonceB64u: string): Promise<string> {
  return b64uEncode(await sign(signingPrivate, b64uDecode(nonceB64u)));
}
