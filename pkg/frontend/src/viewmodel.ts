/**
 * Console view model: the latest broadcast plus transient client state.
 *
 * The console is stateless with respect to the truth: every broadcast is a
 * complete snapshot, so applying any single message rebuilds the whole view.
 * Only cosmetic client state (active tool, pending commands awaiting an ack)
 * lives here, and pending entries expire after five seconds.
 */

import {
  InterfaceEvent,
  SCHEMA_VERSION,
  StateBroadcast,
  stateBroadcastSchema,
  Tool,
} from "./types.js";

export const PENDING_TTL_MS = 5000;

export interface PendingCommand {
  event: InterfaceEvent;
  sentAt: number;
}

export type DecodeResult =
  | { kind: "ok"; state: StateBroadcast }
  | { kind: "schema_mismatch"; got: number }
  | { kind: "reply"; type: string; message?: string }
  | { kind: "invalid"; error: string };

export class ViewModel {
  latest: StateBroadcast | null = null;
  tool: Tool = "Pan";
  pending: PendingCommand[] = [];
  schemaMismatchBanner: number | null = null;

  decodeState(raw: unknown, now = Date.now()): DecodeResult {
    let data: unknown = raw;
    if (typeof raw === "string") {
      try {
        data = JSON.parse(raw);
      } catch (err) {
        return { kind: "invalid", error: String(err) };
      }
    }
    const obj = data as Record<string, unknown>;
    if (obj && typeof obj.type === "string") {
      // ack / error replies to commands
      if (obj.type === "ack") this.expirePending(now);
      return {
        kind: "reply",
        type: obj.type,
        message: typeof obj.message === "string" ? obj.message : undefined,
      };
    }
    if (obj && typeof obj.schema === "number" && obj.schema !== SCHEMA_VERSION) {
      this.schemaMismatchBanner = obj.schema;
      return { kind: "schema_mismatch", got: obj.schema };
    }
    const parsed = stateBroadcastSchema.safeParse(data);
    if (!parsed.success) {
      return { kind: "invalid", error: parsed.error.message };
    }
    this.latest = parsed.data;
    this.schemaMismatchBanner = null;
    this.expirePending(now);
    return { kind: "ok", state: parsed.data };
  }

  markPending(event: InterfaceEvent, now = Date.now()): void {
    this.pending.push({ event, sentAt: now });
  }

  acknowledgeOldest(): void {
    this.pending.shift();
  }

  expirePending(now = Date.now()): void {
    this.pending = this.pending.filter((p) => now - p.sentAt < PENDING_TTL_MS);
  }
}
