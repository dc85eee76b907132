/**
 * Canvas drawing for the top-down map. Works against the subset of the 2D
 * context the tests can stub; the browser passes a real
 * CanvasRenderingContext2D.
 */

import { OrbitCamera, decodeCloud } from "./cloud.js";
import { StateBroadcast } from "./types.js";
import { ViewModel } from "./viewmodel.js";
import { Viewport } from "./viewport.js";

export interface Draw2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  rect(x: number, y: number, w: number, h: number): void;
  stroke(): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
}

const LABEL_TINTS = [
  "#4fc3f7",
  "#ffb74d",
  "#aed581",
  "#f06292",
  "#9575cd",
  "#4db6ac",
];

function polyline(ctx: Draw2D, vp: Viewport, pts: Array<[number, number]>) {
  if (pts.length === 0) return;
  ctx.beginPath();
  const [x0, y0] = vp.worldToCanvas(pts[0]);
  ctx.moveTo(x0, y0);
  for (const p of pts.slice(1)) {
    const [x, y] = vp.worldToCanvas(p);
    ctx.lineTo(x, y);
  }
  ctx.stroke();
}

function disc(
  ctx: Draw2D,
  vp: Viewport,
  center: [number, number],
  radiusMeters: number,
  fill: string,
) {
  const [cx, cy] = vp.worldToCanvas(center);
  ctx.beginPath();
  ctx.arc(cx, cy, Math.max(2, radiusMeters * vp.scale), 0, Math.PI * 2);
  ctx.fillStyle = fill;
  ctx.fill();
}

export function drawMap(ctx: Draw2D, vm: ViewModel, vp: Viewport): void {
  ctx.clearRect(0, 0, vp.width, vp.height);
  const state = vm.latest;
  if (!state) return;

  // scene bounds rectangle
  const lo = vp.worldToCanvas([state.scene_bounds[0][0], state.scene_bounds[0][1]]);
  const hi = vp.worldToCanvas([state.scene_bounds[1][0], state.scene_bounds[1][1]]);
  ctx.strokeStyle = "#666";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.rect(lo[0], hi[1], hi[0] - lo[0], lo[1] - hi[1]);
  ctx.stroke();

  // labelled objects tinted
  for (const obj of state.objects) {
    if (!obj.bounds) continue;
    const a = vp.worldToCanvas([obj.bounds[0][0], obj.bounds[0][1]]);
    const b = vp.worldToCanvas([obj.bounds[1][0], obj.bounds[1][1]]);
    ctx.globalAlpha = 0.45;
    ctx.fillStyle = LABEL_TINTS[obj.label % LABEL_TINTS.length];
    ctx.fillRect(a[0], b[1], b[0] - a[0], a[1] - b[1]);
    ctx.globalAlpha = 1.0;
  }

  // planned path and markings
  ctx.strokeStyle = "#42a5f5";
  ctx.lineWidth = 2;
  polyline(ctx, vp, state.path);
  ctx.strokeStyle = "#ffee58";
  polyline(ctx, vp, state.markings);

  // obstacles (committed, then pending optimistically)
  for (const obs of state.obstacles) {
    disc(ctx, vp, obs.pos, obs.radius, "#66bb6a");
  }
  for (const pending of vm.pending) {
    if (pending.event.type === "place_obstacle") {
      ctx.globalAlpha = 0.4;
      disc(ctx, vp, pending.event.pos, pending.event.radius, "#66bb6a");
      ctx.globalAlpha = 1.0;
    }
  }

  // robot: true pose triangle, odometry ring, predicted-goal cross
  const pose = state.robot.pose;
  const [rx, ry] = vp.worldToCanvas([pose[0], pose[1]]);
  const heading = pose[2];
  const size = 0.18 * vp.scale;
  ctx.fillStyle = "#ef5350";
  ctx.beginPath();
  ctx.moveTo(rx + size * Math.cos(heading), ry - size * Math.sin(heading));
  ctx.lineTo(
    rx + size * 0.6 * Math.cos(heading + 2.5),
    ry - size * 0.6 * Math.sin(heading + 2.5),
  );
  ctx.lineTo(
    rx + size * 0.6 * Math.cos(heading - 2.5),
    ry - size * 0.6 * Math.sin(heading - 2.5),
  );
  ctx.fill();

  const [ox, oy] = vp.worldToCanvas([state.robot.odom[0], state.robot.odom[1]]);
  ctx.strokeStyle = "#ef9a9a";
  ctx.beginPath();
  ctx.arc(ox, oy, Math.max(3, 0.1 * vp.scale), 0, Math.PI * 2);
  ctx.stroke();

  const [px, py] = vp.worldToCanvas(state.robot.predicted);
  ctx.strokeStyle = "#ab47bc";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(px - 6, py);
  ctx.lineTo(px + 6, py);
  ctx.moveTo(px, py - 6);
  ctx.lineTo(px, py + 6);
  ctx.stroke();

  // haptic force arrow at the proxy, when present
  if (state.haptic?.proxy && state.haptic?.force) {
    const [hx, hy] = vp.worldToCanvas([
      state.haptic.proxy[0],
      state.haptic.proxy[1],
    ]);
    const fx = state.haptic.force[0];
    const fy = state.haptic.force[1];
    ctx.strokeStyle = "#ffa726";
    ctx.beginPath();
    ctx.moveTo(hx, hy);
    ctx.lineTo(hx + fx * 8, hy - fy * 8);
    ctx.stroke();
  }
}

export function drawCloudPanel(
  ctx: Draw2D,
  state: StateBroadcast,
  camera: OrbitCamera,
  width: number,
  height: number,
): number {
  ctx.clearRect(0, 0, width, height);
  if (!state.cloud || state.cloud.count === 0) return 0;
  const { positions, colors, count } = decodeCloud(state.cloud);
  const projected = camera.project(positions, width, height);
  let drawn = 0;
  for (let i = 0; i < count; i++) {
    const x = projected[i * 2];
    const y = projected[i * 2 + 1];
    if (Number.isNaN(x) || x < 0 || x >= width || y < 0 || y >= height) {
      continue;
    }
    ctx.fillStyle = `rgb(${colors[i * 3]},${colors[i * 3 + 1]},${colors[i * 3 + 2]})`;
    ctx.fillRect(x, y, 2, 2);
    drawn += 1;
  }
  return drawn;
}
