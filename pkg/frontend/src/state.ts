/** Client-side UI state: slider values, orbit camera, bounds mirrored from
 * the server, and a send-rate limiter.  The UI never sends out-of-range
 * values; everything is clamped against the bounds reported by GET /state.
 */

import type { ServerState, StageTiming } from "./protocol.js";

export interface Orbit {
  azimuth: number;       // radians, wraps
  elevationDeg: number;
  distance: number;
}

export interface UiBounds {
  joints: number;
  parts: number;
  poseBound: number;               // pose sliders live in [-poseBound, poseBound]
  shapeBounds: [number, number];
}

export class UiState {
  pose: number[];
  shape: number[];
  orbit: Orbit = { azimuth: 0, elevationDeg: 8, distance: 4 };
  shMode = false;
  uvMode = false;
  timingMode = true;
  precomputed = true;
  /** part id -> object URL of the uploaded thumbnail */
  textures = new Map<number, string>();
  connected = false;
  lastTiming: StageTiming | null = null;
  readonly bounds: UiBounds;

  constructor(server: ServerState) {
    this.bounds = {
      joints: server.joints,
      parts: server.parts,
      poseBound: server.pose_bound,
      shapeBounds: server.shape_bounds,
    };
    this.pose = server.pose.slice();
    this.shape = server.shape.slice();
    this.shMode = server.sh_mode;
  }

  /** Clamp-and-set one pose angle; returns the value actually stored. */
  setPose(index: number, value: number): number {
    const b = this.bounds.poseBound;
    const v = clamp(value, -b, b);
    this.pose[index] = v;
    return v;
  }

  /** Clamp-and-set one part scale; returns the value actually stored. */
  setShape(index: number, value: number): number {
    const [lo, hi] = this.bounds.shapeBounds;
    const v = clamp(value, lo, hi);
    this.shape[index] = v;
    return v;
  }
}

export function clamp(value: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, value));
}

/** Rate limiter for slider drags: at most one send per interval, and the
 * trailing value always goes out.  The server coalesces anyway, so sending
 * faster than ~30 Hz is pointless.
 */
export class Debouncer {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: (() => void) | null = null;
  private lastSend = -Infinity;

  constructor(
    private readonly intervalMs: number = 33,
    private readonly now: () => number = () => Date.now(),
  ) {}

  push(send: () => void): void {
    const t = this.now();
    if (this.timer === null && t - this.lastSend >= this.intervalMs) {
      this.lastSend = t;
      send();
      return;
    }
    this.pending = send;
    if (this.timer === null) {
      const wait = Math.max(0, this.intervalMs - (t - this.lastSend));
      this.timer = setTimeout(() => this.flush(), wait);
    }
  }

  flush(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    if (this.pending !== null) {
      this.lastSend = this.now();
      const send = this.pending;
      this.pending = null;
      send();
    }
  }
}
