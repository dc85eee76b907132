/** Invertible world-meters to canvas-pixels transform for the top-down map. */

export class OutsideMapError extends Error {}

export interface ViewportState {
  scale: number; // pixels per meter
  originPx: [number, number]; // canvas position of world (0, 0)
  width: number;
  height: number;
}

export class Viewport {
  scale: number;
  originPx: [number, number];
  width: number;
  height: number;

  constructor(state: ViewportState) {
    if (state.scale <= 0) throw new Error("scale must be positive");
    this.scale = state.scale;
    this.originPx = [...state.originPx];
    this.width = state.width;
    this.height = state.height;
  }

  /** Fit the world rectangle into the canvas with a small margin. */
  static fit(
    boundsLo: [number, number],
    boundsHi: [number, number],
    width: number,
    height: number,
    marginPx = 12,
  ): Viewport {
    const spanX = boundsHi[0] - boundsLo[0];
    const spanY = boundsHi[1] - boundsLo[1];
    const scale = Math.min(
      (width - 2 * marginPx) / spanX,
      (height - 2 * marginPx) / spanY,
    );
    // canvas y grows downward; world y grows upward
    const originX = marginPx - boundsLo[0] * scale;
    const originY = height - marginPx + boundsLo[1] * scale;
    return new Viewport({ scale, originPx: [originX, originY], width, height });
  }

  worldToCanvas(world: [number, number]): [number, number] {
    return [
      this.originPx[0] + world[0] * this.scale,
      this.originPx[1] - world[1] * this.scale,
    ];
  }

  /**
   * Inverse transform; throws OutsideMapError for pixels off the canvas.
   * Ground-plane tools use the returned (x, y) with z = 0.
   */
  canvasToWorld(pixel: [number, number]): [number, number] {
    const [px, py] = pixel;
    if (px < 0 || px > this.width || py < 0 || py > this.height) {
      throw new OutsideMapError(`pixel (${px}, ${py}) outside the map`);
    }
    return [
      (px - this.originPx[0]) / this.scale,
      (this.originPx[1] - py) / this.scale,
    ];
  }

  pan(dxPx: number, dyPx: number): void {
    this.originPx[0] += dxPx;
    this.originPx[1] += dyPx;
  }

  zoom(factor: number, anchorPx: [number, number]): void {
    if (factor <= 0) throw new Error("zoom factor must be positive");
    const before = this.canvasToWorld(anchorPx);
    this.scale *= factor;
    const after = this.worldToCanvas(before);
    this.originPx[0] += anchorPx[0] - after[0];
    this.originPx[1] += anchorPx[1] - after[1];
  }
}
