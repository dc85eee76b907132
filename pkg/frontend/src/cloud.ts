/** Decoding of the q16 point-cloud payload and a tiny orbit projector. */

import { StateBroadcast } from "./types.js";

export interface DecodedCloud {
  positions: Float32Array; // xyz triplets, world meters
  colors: Uint8Array; // rgb triplets
  count: number;
}

function base64ToBytes(data: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(data);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(data, "base64"));
}

export function decodeCloud(
  cloud: NonNullable<StateBroadcast["cloud"]>,
): DecodedCloud {
  const bytes = base64ToBytes(cloud.data);
  const stride = 9; // u16 x,y,z + u8 r,g,b
  const n = Math.min(cloud.count, Math.floor(bytes.length / stride));
  const positions = new Float32Array(n * 3);
  const colors = new Uint8Array(n * 3);
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  for (let i = 0; i < n; i++) {
    const off = i * stride;
    positions[i * 3] = cloud.origin[0] + view.getUint16(off, true) * cloud.scale;
    positions[i * 3 + 1] =
      cloud.origin[1] + view.getUint16(off + 2, true) * cloud.scale;
    positions[i * 3 + 2] =
      cloud.origin[2] + view.getUint16(off + 4, true) * cloud.scale;
    colors[i * 3] = bytes[off + 6];
    colors[i * 3 + 1] = bytes[off + 7];
    colors[i * 3 + 2] = bytes[off + 8];
  }
  return { positions, colors, count: n };
}

/** Orbit camera for the secondary 3D panel: azimuth/elevation around a pivot. */
export class OrbitCamera {
  azimuth = -Math.PI / 4;
  elevation = Math.PI / 5;
  distance = 4.0;
  pivot: [number, number, number] = [0, 0, 0];

  rotate(dAzimuth: number, dElevation: number): void {
    this.azimuth += dAzimuth;
    this.elevation = Math.min(
      Math.PI / 2 - 0.01,
      Math.max(-Math.PI / 2 + 0.01, this.elevation + dElevation),
    );
  }

  /** Project world points to canvas pixels (simple perspective). */
  project(
    positions: Float32Array,
    width: number,
    height: number,
    focal = 400,
  ): Float32Array {
    const ca = Math.cos(this.azimuth);
    const sa = Math.sin(this.azimuth);
    const ce = Math.cos(this.elevation);
    const se = Math.sin(this.elevation);
    const out = new Float32Array((positions.length / 3) * 2);
    for (let i = 0; i < positions.length / 3; i++) {
      const x = positions[i * 3] - this.pivot[0];
      const y = positions[i * 3 + 1] - this.pivot[1];
      const z = positions[i * 3 + 2] - this.pivot[2];
      // rotate into the camera frame, then translate back by the distance
      const rx = ca * x + sa * y;
      const ry = -sa * ce * x + ca * ce * y + se * z;
      const rz = sa * se * x - ca * se * y + ce * z + this.distance;
      if (rz <= 0.05) {
        out[i * 2] = NaN;
        out[i * 2 + 1] = NaN;
        continue;
      }
      out[i * 2] = width / 2 + (focal * rx) / rz;
      out[i * 2 + 1] = height / 2 - (focal * ry) / rz;
    }
    return out;
  }
}
