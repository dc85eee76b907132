/**
 * Wire types shared with the telehaptic server.
 *
 * These zod schemas mirror the JSON schema files published by the server
 * package (src/telehaptic/schemas/); the test suite pins the two against
 * shared fixtures so drift fails loudly.
 */

import { z } from "zod";

export const SCHEMA_VERSION = 1;

const vec2 = z.tuple([z.number(), z.number()]);
const vec3 = z.tuple([z.number(), z.number(), z.number()]);

export const obstacleSchema = z.object({
  id: z.number().int(),
  pos: vec2,
  radius: z.number(),
});

export const objectSummarySchema = z.object({
  label: z.number().int(),
  centroid: vec3,
  bounds: z.tuple([vec3, vec3]).optional(),
});

export const cloudSchema = z.object({
  encoding: z.literal("q16"),
  origin: vec3,
  scale: z.number(),
  count: z.number().int(),
  data: z.string(),
});

export const stateBroadcastSchema = z.object({
  schema: z.number().int(),
  t_ms: z.number(),
  scene_bounds: z.tuple([vec3, vec3]),
  robot: z.object({
    pose: vec3,
    odom: vec3,
    predicted: vec2,
  }),
  path: z.array(vec2),
  markings: z.array(vec2),
  obstacles: z.array(obstacleSchema),
  objects: z.array(objectSummarySchema),
  cloud: cloudSchema.optional(),
  haptic: z
    .object({ proxy: vec3.optional(), force: vec3.optional() })
    .optional(),
  timing: z.record(z.string(), z.number()).optional(),
});

export type StateBroadcast = z.infer<typeof stateBroadcastSchema>;

export const markPathEventSchema = z.object({
  type: z.literal("mark_path"),
  points: z.array(vec3).min(1),
});

export const markObjectEventSchema = z.object({
  type: z.literal("mark_object"),
  point: vec3,
});

export const placeObstacleEventSchema = z.object({
  type: z.literal("place_obstacle"),
  pos: vec2,
  shape: z.enum(["sphere", "box"]),
  radius: z.number().positive(),
});

export const removeObstacleEventSchema = z.object({
  type: z.literal("remove_obstacle"),
  id: z.number().int(),
});

export const pushEventSchema = z.object({
  type: z.literal("push"),
  body_id: z.number().int(),
  hip: vec3,
});

export const interfaceEventSchema = z.discriminatedUnion("type", [
  markPathEventSchema,
  markObjectEventSchema,
  placeObstacleEventSchema,
  removeObstacleEventSchema,
  pushEventSchema,
]);

export type InterfaceEvent = z.infer<typeof interfaceEventSchema>;

export type Tool = "Pan" | "MarkPath" | "MarkObject" | "PlaceObstacle" | "Push";
