/** Browser entry point: wires the sliders, orbit controls, texture slots,
 * and mode toggles to the WebSocket stream and paints frames to a canvas.
 */

import { ViewerClient } from "./client.js";
import { formatCaption, timingBars } from "./overlay.js";
import type { ServerState } from "./protocol.js";
import { Debouncer, UiState } from "./state.js";

async function main(): Promise<void> {
  const server = (await (await fetch("/state")).json()) as ServerState;
  const ui = new UiState(server);
  const debounce = new Debouncer();

  const canvas = document.getElementById("frame") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const uvCanvas = document.getElementById("uv-frame") as HTMLCanvasElement;
  const uvCtx = uvCanvas.getContext("2d")!;
  const status = document.getElementById("status")!;
  const overlay = document.getElementById("timing")!;

  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
  const client = new ViewerClient(wsUrl, {
    onOpen: () => {
      ui.connected = true;
      status.textContent = "connected";
      client.sendMode({ timing: true });
    },
    onClose: () => {
      ui.connected = false;
      status.textContent = "disconnected";
    },
    onError: (err) => {
      status.textContent = `error: ${err.message}`;
    },
    onFrame: (frame) => {
      void paintPng(ctx, frame.rgb);
      if (frame.uv) void paintPng(uvCtx, frame.uv);
      if (frame.meta.timing) {
        ui.lastTiming = frame.meta.timing;
        renderOverlay(overlay, frame.meta.timing);
      }
    },
  });

  buildSliders(
    document.getElementById("pose-sliders")!,
    ui.bounds.joints,
    -ui.bounds.poseBound,
    ui.bounds.poseBound,
    ui.pose,
    (i, v) => {
      const clamped = ui.setPose(i, v);
      debounce.push(() => client.sendPose(ui.pose.slice()));
      return clamped;
    },
  );
  buildSliders(
    document.getElementById("shape-sliders")!,
    ui.bounds.parts,
    ui.bounds.shapeBounds[0],
    ui.bounds.shapeBounds[1],
    ui.shape,
    (i, v) => {
      const clamped = ui.setShape(i, v);
      debounce.push(() => client.sendShape(ui.shape.slice()));
      return clamped;
    },
  );

  wireOrbit(ui, client, debounce);
  wireTextureSlots(ui, client);
  wireToggles(ui, client);
}

function buildSliders(
  root: HTMLElement,
  count: number,
  lo: number,
  hi: number,
  initial: number[],
  onInput: (index: number, value: number) => number,
): void {
  for (let i = 0; i < count; i++) {
    const row = document.createElement("label");
    row.className = "slider-row";
    row.textContent = `${i}`;
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(lo);
    input.max = String(hi);
    input.step = "0.01";
    input.value = String(initial[i]);
    input.addEventListener("input", () => {
      input.value = String(onInput(i, Number(input.value)));
    });
    row.appendChild(input);
    root.appendChild(row);
  }
}

function wireOrbit(ui: UiState, client: ViewerClient, debounce: Debouncer): void {
  const send = () =>
    debounce.push(() =>
      client.sendCamera(ui.orbit.azimuth, ui.orbit.elevationDeg, ui.orbit.distance),
    );
  const azimuth = document.getElementById("orbit-azimuth") as HTMLInputElement;
  const elevation = document.getElementById("orbit-elevation") as HTMLInputElement;
  const distance = document.getElementById("orbit-distance") as HTMLInputElement;
  azimuth.addEventListener("input", () => {
    ui.orbit.azimuth = Number(azimuth.value);
    send();
  });
  elevation.addEventListener("input", () => {
    ui.orbit.elevationDeg = Number(elevation.value);
    send();
  });
  distance.addEventListener("input", () => {
    ui.orbit.distance = Number(distance.value);
    send();
  });
}

function wireTextureSlots(ui: UiState, client: ViewerClient): void {
  const root = document.getElementById("texture-slots")!;
  for (let part = 1; part <= ui.bounds.parts; part++) {
    const slot = document.createElement("label");
    slot.className = "texture-slot";
    slot.textContent = `part ${part}`;
    const input = document.createElement("input");
    input.type = "file";
    input.accept = "image/png";
    input.addEventListener("change", async () => {
      const file = input.files?.[0];
      if (!file) return;
      const bytes = new Uint8Array(await file.arrayBuffer());
      client.sendTexture(part, bytes);
      const old = ui.textures.get(part);
      if (old) URL.revokeObjectURL(old);
      const url = URL.createObjectURL(file);
      ui.textures.set(part, url);
      slot.style.backgroundImage = `url(${url})`;
    });
    slot.appendChild(input);
    root.appendChild(slot);
  }
}

function wireToggles(ui: UiState, client: ViewerClient): void {
  const pairs: Array<[string, (checked: boolean) => void]> = [
    ["toggle-sh", (c) => ((ui.shMode = c), client.sendMode({ sh: c }))],
    ["toggle-uv", (c) => ((ui.uvMode = c), client.sendMode({ uv: c }))],
    [
      "toggle-precomputed",
      (c) => ((ui.precomputed = c), client.sendMode({ precomputed: c })),
    ],
  ];
  for (const [id, apply] of pairs) {
    const box = document.getElementById(id) as HTMLInputElement;
    box.addEventListener("change", () => apply(box.checked));
  }
}

function renderOverlay(root: HTMLElement, timing: Parameters<typeof timingBars>[0]): void {
  root.innerHTML = "";
  for (const bar of timingBars(timing)) {
    const row = document.createElement("div");
    row.className = "timing-row";
    const label = document.createElement("span");
    label.textContent = `${bar.label} ${bar.ms.toFixed(1)} ms`;
    const fill = document.createElement("div");
    fill.className = "timing-bar";
    fill.style.width = `${(bar.width * 100).toFixed(1)}%`;
    row.append(label, fill);
    root.appendChild(row);
  }
  const caption = document.createElement("div");
  caption.className = "timing-caption";
  caption.textContent = formatCaption(timing);
  root.appendChild(caption);
}

async function paintPng(ctx: CanvasRenderingContext2D, png: Uint8Array): Promise<void> {
  const blob = new Blob([png.slice().buffer], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  ctx.canvas.width = bitmap.width;
  ctx.canvas.height = bitmap.height;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(bitmap, 0, 0);
  bitmap.close();
}

main().catch((err) => {
  document.getElementById("status")!.textContent = `failed to start: ${err}`;
});
