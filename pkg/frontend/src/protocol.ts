/** Wire types for the "uvvol.v1" WebSocket protocol and the HTTP routes.
 *
 * Schemas mirror docs/protocol.md in the repository root; this module is the
 * single place where message shapes are written down on the client side.
 */

export const WS_SUBPROTOCOL = "uvvol.v1";

export interface StageTiming {
  volume_build_ms: number;
  density_march_ms: number;
  uv_decode_ms: number;
  nts_ms: number;
  color_ms: number;
  composite_ms: number;
  total_ms: number;
}

/** GET /state response. */
export interface ServerState {
  pose: number[];
  shape: number[];
  sh_mode: boolean;
  overridden_parts: number[];
  digest: string;
  frame_size: [number, number];
  joints: number;
  parts: number;
  pose_bound: number;
  shape_bounds: [number, number];
}

export interface FrameMeta {
  type: "frame";
  id: number;
  digest: string;
  timing?: StageTiming;
  uv?: boolean;
}

export interface ErrorMeta {
  type: "error";
  message: string;
}

export type ServerMeta = FrameMeta | ErrorMeta;

export interface CameraPayload {
  azimuth: number;
  elevation_deg?: number;
  distance?: number;
  width?: number;
  height?: number;
}

export interface ModePayload {
  sh?: boolean;
  uv?: boolean;
  timing?: boolean;
  precomputed?: boolean;
}

export type ClientMessage =
  | { type: "pose"; payload: { pose: number[] } }
  | { type: "shape"; payload: { shape: number[] } }
  | { type: "camera"; payload: CameraPayload }
  | { type: "texture_meta"; payload: { part: number } }
  | { type: "mode"; payload: ModePayload };

export function encodeMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}

export function parseServerMeta(text: string): ServerMeta {
  const obj = JSON.parse(text);
  if (obj.type !== "frame" && obj.type !== "error") {
    throw new Error(`unexpected server message type ${String(obj.type)}`);
  }
  return obj as ServerMeta;
}
