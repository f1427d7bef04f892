/** Timing overlay: turns a per-stage millisecond breakdown into bar-chart
 * geometry.  Pure functions so the layout is unit-testable without a DOM.
 */

import type { StageTiming } from "./protocol.js";

export const STAGE_ORDER = [
  "volume_build_ms",
  "density_march_ms",
  "uv_decode_ms",
  "nts_ms",
  "color_ms",
  "composite_ms",
] as const;

export const STAGE_LABELS: Record<(typeof STAGE_ORDER)[number], string> = {
  volume_build_ms: "volume build",
  density_march_ms: "density+march",
  uv_decode_ms: "uv decode",
  nts_ms: "nts",
  color_ms: "color",
  composite_ms: "composite",
};

export interface Bar {
  stage: (typeof STAGE_ORDER)[number];
  label: string;
  ms: number;
  /** fraction of the chart width, in [0, 1] */
  width: number;
}

/** Per-stage bars scaled so the longest stage spans the full width.
 * All-zero timing yields zero-width bars (no NaNs, no crash).
 */
export function timingBars(timing: StageTiming): Bar[] {
  const longest = Math.max(...STAGE_ORDER.map((k) => timing[k]), 0);
  return STAGE_ORDER.map((stage) => ({
    stage,
    label: STAGE_LABELS[stage],
    ms: timing[stage],
    width: longest > 0 ? timing[stage] / longest : 0,
  }));
}

/** Sum of the stage bars, for the "stages vs total" caption. */
export function stageSum(timing: StageTiming): number {
  return STAGE_ORDER.reduce((acc, k) => acc + timing[k], 0);
}

export function formatCaption(timing: StageTiming): string {
  return `stages ${stageSum(timing).toFixed(1)} ms / total ${timing.total_ms.toFixed(1)} ms`;
}
