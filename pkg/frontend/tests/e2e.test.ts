/** End-to-end tests against the real Python edit service.
 *
 * A fixture server and a reference-render oracle are spawned as child
 * processes; both construct the same seed-deterministic model, so a frame
 * streamed over the WebSocket must match the oracle's PNG byte for byte.
 */

import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { PNG } from "pngjs";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WS from "ws";

import { Frame, SocketLike, ViewerClient } from "../src/client.js";

const HELPERS = join(dirname(fileURLToPath(import.meta.url)), "helpers");

interface OracleMeta {
  part: number;
  pose: number[];
  shape: number[];
  initial_digest: string;
  final_digest: string;
  tex_digest: string;
}

let server: ChildProcess;
let port: number;
let oracleDir: string;
let meta: OracleMeta;

beforeAll(async () => {
  oracleDir = mkdtempSync(join(tmpdir(), "viewer-oracle-"));
  const oracle = spawnSync("python3", [join(HELPERS, "direct_oracle.py"), oracleDir], {
    encoding: "utf-8",
  });
  if (oracle.status !== 0) throw new Error(`oracle failed: ${oracle.stderr}`);
  meta = JSON.parse(readFileSync(join(oracleDir, "meta.json"), "utf-8"));

  server = spawn("python3", [join(HELPERS, "serve_fixture.py")], {
    stdio: ["ignore", "pipe", "inherit"],
  });
  port = await new Promise<number>((resolve, reject) => {
    let buf = "";
    server.stdout!.on("data", (chunk: Buffer) => {
      buf += chunk.toString();
      const m = buf.match(/PORT (\d+)/);
      if (m) resolve(Number(m[1]));
    });
    server.on("exit", (code) => reject(new Error(`server exited early (${code})`)));
  });
  await waitForHealthz();
});

afterAll(() => {
  server?.kill();
});

async function waitForHealthz(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const res = await fetch(`http://127.0.0.1:${port}/healthz`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await sleep(100);
  }
  throw new Error("service never became healthy");
}

function sleep(ms: number): Promise<void> {
  return new Promise((r) => setTimeout(r, ms));
}

interface TestConnection {
  client: ViewerClient;
  frames: Frame[];
  errors: string[];
  waitForDigest(digest: string, timeoutMs?: number): Promise<Frame>;
  close(): void;
}

async function connect(): Promise<TestConnection> {
  const frames: Frame[] = [];
  const errors: string[] = [];
  let opened: () => void;
  const openPromise = new Promise<void>((r) => (opened = r));
  const client = new ViewerClient(
    `ws://127.0.0.1:${port}/ws`,
    {
      onOpen: () => opened(),
      onFrame: (f) => frames.push(f),
      onError: (e) => errors.push(e.message),
    },
    (url, proto) => new WS(url, proto) as unknown as SocketLike,
  );
  await openPromise;
  return {
    client,
    frames,
    errors,
    async waitForDigest(digest, timeoutMs = 60_000) {
      const deadline = Date.now() + timeoutMs;
      while (Date.now() < deadline) {
        const hit = frames.find((f) => f.meta.digest === digest);
        if (hit) return hit;
        await sleep(50);
      }
      throw new Error(
        `no frame with digest ${digest}; saw ${frames.map((f) => f.meta.digest).join(", ")}`,
      );
    },
    close: () => client.close(),
  };
}

function decode(png: Uint8Array | Buffer): PNG {
  return PNG.sync.read(Buffer.from(png));
}

describe("protocol round-trip", () => {
  it("streams a final frame byte-identical to a direct render of the final state", async () => {
    const conn = await connect();
    try {
      await conn.waitForDigest(meta.initial_digest);

      conn.client.sendPose(meta.pose);
      conn.client.sendShape(meta.shape);
      const checker = readFileSync(join(oracleDir, "checker.png"));
      conn.client.sendTexture(meta.part, new Uint8Array(checker));

      const finalFrame = await conn.waitForDigest(meta.final_digest);
      const expected = readFileSync(join(oracleDir, "final.png"));
      expect(Buffer.from(finalFrame.rgb).equals(expected)).toBe(true);
      expect(conn.errors).toEqual([]);
      // coalescing: three mutations must not produce more than three extra frames
      expect(conn.frames.length).toBeLessThanOrEqual(4);
    } finally {
      conn.close();
    }
  });
});

describe("retexture through the UI path", () => {
  it("changes only the target part's pixels, measured against the part-label map", async () => {
    const conn = await connect();
    try {
      const before = await conn.waitForDigest(meta.initial_digest);
      const checker = readFileSync(join(oracleDir, "checker.png"));
      conn.client.sendTexture(meta.part, new Uint8Array(checker));
      const after = await conn.waitForDigest(meta.tex_digest);

      // the streamed retextured frame also matches the direct render exactly
      const expected = readFileSync(join(oracleDir, "tex_only.png"));
      expect(Buffer.from(after.rgb).equals(expected)).toBe(true);

      const imgBefore = decode(before.rgb);
      const imgAfter = decode(after.rgb);
      const mask = decode(readFileSync(join(oracleDir, "mask.png")));
      expect(imgAfter.width).toBe(imgBefore.width);
      expect(imgAfter.height).toBe(imgBefore.height);

      let changed = 0;
      for (let i = 0; i < imgBefore.width * imgBefore.height; i++) {
        const o = i * 4;
        const pixelChanged =
          imgBefore.data[o] !== imgAfter.data[o] ||
          imgBefore.data[o + 1] !== imgAfter.data[o + 1] ||
          imgBefore.data[o + 2] !== imgAfter.data[o + 2];
        if (pixelChanged) {
          changed++;
          expect(mask.data[o]).toBe(255); // every changed pixel lies on the part
        }
      }
      expect(changed).toBeGreaterThan(0);
    } finally {
      conn.close();
    }
  });
});
