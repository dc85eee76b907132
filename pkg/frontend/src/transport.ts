/**
 * Connection wrapper around any WebSocket-shaped object, so the browser uses
 * the native WebSocket and tests inject one from the `ws` package.
 */

import { InterfaceEvent, interfaceEventSchema } from "./types.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  addEventListener(
    type: "message" | "open" | "close" | "error",
    listener: (event: { data?: unknown }) => void,
  ): void;
}

export class NotConnectedError extends Error {}

export class ConsoleConnection {
  private socket: SocketLike | null = null;
  private open = false;
  onMessage: (raw: string) => void = () => {};
  onClose: () => void = () => {};

  attach(socket: SocketLike): Promise<void> {
    this.socket = socket;
    return new Promise((resolve, reject) => {
      socket.addEventListener("open", () => {
        this.open = true;
        resolve();
      });
      socket.addEventListener("message", (event) => {
        const data = event.data;
        this.onMessage(
          typeof data === "string" ? data : String(data ?? ""),
        );
      });
      socket.addEventListener("close", () => {
        this.open = false;
        this.onClose();
      });
      socket.addEventListener("error", (err) => reject(err));
    });
  }

  get connected(): boolean {
    return this.open;
  }

  /** Validate against the published schema, then send. */
  sendEvent(event: InterfaceEvent): void {
    if (!this.socket || !this.open) {
      throw new NotConnectedError("console is not connected");
    }
    const checked = interfaceEventSchema.parse(event);
    this.socket.send(JSON.stringify(checked));
  }

  close(): void {
    this.socket?.close();
  }
}
