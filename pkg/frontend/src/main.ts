/** Browser entry point: map canvas, cloud panel, tool buttons, live socket. */

import { OrbitCamera } from "./cloud.js";
import {
  batchDragToMarkPath,
  markObjectEvent,
  placeObstacleEvent,
} from "./commands.js";
import { drawCloudPanel, drawMap } from "./render.js";
import { ConsoleConnection } from "./transport.js";
import { InterfaceEvent, Tool } from "./types.js";
import { ViewModel } from "./viewmodel.js";
import { OutsideMapError, Viewport } from "./viewport.js";

const vm = new ViewModel();
const connection = new ConsoleConnection();
const camera = new OrbitCamera();
let viewport: Viewport | null = null;

const mapCanvas = document.getElementById("map") as HTMLCanvasElement;
const cloudCanvas = document.getElementById("cloud") as HTMLCanvasElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const status = document.getElementById("status") as HTMLDivElement;
const mapCtx = mapCanvas.getContext("2d")!;
const cloudCtx = cloudCanvas.getContext("2d")!;

function setBanner(text: string | null) {
  banner.textContent = text ?? "";
  banner.style.display = text ? "block" : "none";
}

function redraw() {
  if (!vm.latest) return;
  if (!viewport) {
    const lo = vm.latest.scene_bounds[0];
    const hi = vm.latest.scene_bounds[1];
    viewport = Viewport.fit(
      [lo[0], lo[1]],
      [hi[0], hi[1]],
      mapCanvas.width,
      mapCanvas.height,
    );
    camera.pivot = [
      (lo[0] + hi[0]) / 2,
      (lo[1] + hi[1]) / 2,
      0,
    ];
    camera.distance = Math.max(hi[0] - lo[0], hi[1] - lo[1]);
  }
  drawMap(mapCtx, vm, viewport);
  drawCloudPanel(cloudCtx, vm.latest, camera, cloudCanvas.width, cloudCanvas.height);
}

function sendEvent(event: InterfaceEvent) {
  try {
    connection.sendEvent(event);
    vm.markPending(event);
    redraw();
  } catch (err) {
    setBanner(`send failed: ${err}`);
  }
}

// tool selection
for (const tool of ["Pan", "MarkPath", "MarkObject", "PlaceObstacle", "Push"] as Tool[]) {
  document.getElementById(`tool-${tool}`)?.addEventListener("click", () => {
    vm.tool = tool;
    status.textContent = `tool: ${tool}`;
  });
}

// cursor handling: MarkPath drags batch into one event
let dragSamples: Array<[number, number]> = [];
let dragging = false;

mapCanvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  dragSamples = [];
});

mapCanvas.addEventListener("mousemove", (ev) => {
  if (!dragging || !viewport) return;
  if (vm.tool === "MarkPath") {
    try {
      dragSamples.push(viewport.canvasToWorld([ev.offsetX, ev.offsetY]));
    } catch (err) {
      if (!(err instanceof OutsideMapError)) throw err;
    }
  } else if (vm.tool === "Pan") {
    viewport.pan(ev.movementX, ev.movementY);
    redraw();
  }
});

mapCanvas.addEventListener("mouseup", (ev) => {
  dragging = false;
  if (!viewport) return;
  let world: [number, number];
  try {
    world = viewport.canvasToWorld([ev.offsetX, ev.offsetY]);
  } catch (err) {
    if (err instanceof OutsideMapError) return;
    throw err;
  }
  if (vm.tool === "MarkPath" && dragSamples.length > 0) {
    sendEvent(batchDragToMarkPath(dragSamples));
    dragSamples = [];
  } else if (vm.tool === "PlaceObstacle") {
    sendEvent(placeObstacleEvent(world));
  } else if (vm.tool === "MarkObject") {
    // click constrains to the ground plane; the server resolves the surface
    sendEvent(markObjectEvent([world[0], world[1], 0.25]));
  }
});

cloudCanvas.addEventListener("mousemove", (ev) => {
  if (ev.buttons !== 1) return;
  camera.rotate(ev.movementX * 0.01, ev.movementY * 0.01);
  redraw();
});

const url = new URLSearchParams(location.search).get("server")
  ?? `ws://${location.hostname || "127.0.0.1"}:8765`;
const socket = new WebSocket(url);
connection.onMessage = (raw) => {
  const result = vm.decodeState(raw);
  if (result.kind === "schema_mismatch") {
    setBanner(`schema mismatch: server speaks v${result.got}`);
  } else if (result.kind === "ok") {
    setBanner(vm.schemaMismatchBanner ? `schema v${vm.schemaMismatchBanner}` : null);
    redraw();
  } else if (result.kind === "reply" && result.type === "error") {
    setBanner(`server: ${result.message}`);
  }
};
connection.attach(socket as unknown as Parameters<typeof connection.attach>[0])
  .then(() => {
    status.textContent = `connected to ${url}`;
  })
  .catch((err) => setBanner(`connection failed: ${err}`));
