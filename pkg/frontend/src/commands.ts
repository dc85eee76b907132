/** Construction of interface-event messages, exactly the server schema. */

import { InterfaceEvent, interfaceEventSchema } from "./types.js";

export function markPathEvent(
  points: Array<[number, number, number]>,
): InterfaceEvent {
  return interfaceEventSchema.parse({ type: "mark_path", points });
}

export function markObjectEvent(
  point: [number, number, number],
): InterfaceEvent {
  return interfaceEventSchema.parse({ type: "mark_object", point });
}

export function placeObstacleEvent(
  pos: [number, number],
  radius = 0.2,
  shape: "sphere" | "box" = "sphere",
): InterfaceEvent {
  return interfaceEventSchema.parse({
    type: "place_obstacle",
    pos,
    shape,
    radius,
  });
}

export function removeObstacleEvent(id: number): InterfaceEvent {
  return interfaceEventSchema.parse({ type: "remove_obstacle", id });
}

export function pushEvent(
  bodyId: number,
  hip: [number, number, number],
): InterfaceEvent {
  return interfaceEventSchema.parse({ type: "push", body_id: bodyId, hip });
}

/**
 * Collapse a MarkPath drag into one ordered mark_path event on the ground
 * plane, dropping samples closer than minSpacing meters.
 */
export function batchDragToMarkPath(
  worldSamples: Array<[number, number]>,
  minSpacing = 0.05,
): InterfaceEvent {
  const kept: Array<[number, number, number]> = [];
  for (const [x, y] of worldSamples) {
    const last = kept[kept.length - 1];
    if (last && Math.hypot(x - last[0], y - last[1]) < minSpacing) continue;
    kept.push([x, y, 0]);
  }
  if (kept.length === 0 && worldSamples.length > 0) {
    const [x, y] = worldSamples[0];
    kept.push([x, y, 0]);
  }
  return markPathEvent(kept);
}
