/** WebSocket client for the edit stream.
 *
 * The socket implementation is injected so the same class runs in the
 * browser (native WebSocket) and under node in tests (the `ws` package,
 * which exposes the same event surface).
 */

import {
  ClientMessage,
  ErrorMeta,
  FrameMeta,
  WS_SUBPROTOCOL,
  encodeMessage,
  parseServerMeta,
} from "./protocol.js";

/** The slice of the WebSocket API the client uses. */
export interface SocketLike {
  binaryType: string;
  send(data: string | ArrayBuffer | Uint8Array): void;
  close(): void;
  addEventListener(type: "open", fn: () => void): void;
  addEventListener(type: "close", fn: () => void): void;
  addEventListener(type: "message", fn: (ev: { data: unknown }) => void): void;
}

export type SocketFactory = (url: string, subprotocol: string) => SocketLike;

export interface Frame {
  meta: FrameMeta;
  /** PNG bytes of the RGB frame */
  rgb: Uint8Array;
  /** PNG bytes of the UV false-color frame, when uv mode is on */
  uv: Uint8Array | null;
}

export interface ViewerEvents {
  onFrame?: (frame: Frame) => void;
  onError?: (err: ErrorMeta) => void;
  onOpen?: () => void;
  onClose?: () => void;
}

export class ViewerClient {
  private socket: SocketLike;
  private pendingMeta: FrameMeta | null = null;
  private pendingRgb: Uint8Array | null = null;

  constructor(url: string, events: ViewerEvents, factory?: SocketFactory) {
    const make: SocketFactory =
      factory ??
      ((u, proto) => new WebSocket(u, proto) as unknown as SocketLike);
    this.socket = make(url, WS_SUBPROTOCOL);
    this.socket.binaryType = "arraybuffer";
    this.socket.addEventListener("open", () => events.onOpen?.());
    this.socket.addEventListener("close", () => events.onClose?.());
    this.socket.addEventListener("message", (ev) => {
      if (typeof ev.data === "string") {
        const meta = parseServerMeta(ev.data);
        if (meta.type === "error") {
          events.onError?.(meta);
        } else {
          // binary frame(s) follow; stash until they arrive
          this.pendingMeta = meta;
          this.pendingRgb = null;
        }
        return;
      }
      const bytes = toBytes(ev.data);
      if (this.pendingMeta === null) {
        return; // binary with no announced frame: drop
      }
      if (this.pendingRgb === null && this.pendingMeta.uv) {
        this.pendingRgb = bytes; // uv frames arrive as rgb png, then uv png
        return;
      }
      const frame: Frame = this.pendingMeta.uv
        ? { meta: this.pendingMeta, rgb: this.pendingRgb!, uv: bytes }
        : { meta: this.pendingMeta, rgb: bytes, uv: null };
      this.pendingMeta = null;
      this.pendingRgb = null;
      events.onFrame?.(frame);
    });
  }

  send(msg: ClientMessage): void {
    this.socket.send(encodeMessage(msg));
  }

  sendPose(pose: number[]): void {
    this.send({ type: "pose", payload: { pose } });
  }

  sendShape(shape: number[]): void {
    this.send({ type: "shape", payload: { shape } });
  }

  sendCamera(azimuth: number, elevationDeg?: number, distance?: number): void {
    this.send({
      type: "camera",
      payload: { azimuth, elevation_deg: elevationDeg, distance },
    });
  }

  /** texture_meta announces the part; the PNG goes out as one binary frame. */
  sendTexture(part: number, png: Uint8Array): void {
    this.send({ type: "texture_meta", payload: { part } });
    this.socket.send(png);
  }

  sendMode(mode: {
    sh?: boolean;
    uv?: boolean;
    timing?: boolean;
    precomputed?: boolean;
  }): void {
    this.send({ type: "mode", payload: mode });
  }

  close(): void {
    this.socket.close();
  }
}

function toBytes(data: unknown): Uint8Array {
  if (data instanceof ArrayBuffer) return new Uint8Array(data);
  if (data instanceof Uint8Array) return new Uint8Array(data); // copies; ws Buffers may be pooled
  throw new Error("unsupported binary payload");
}
