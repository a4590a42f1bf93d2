import type { Pt } from "./lasso.js";

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export interface ScatterData {
  ids: number[];
  xs: Float64Array; // projected data coordinates
  ys: Float64Array;
}

const COLORS = {
  unlabeled: "#b8bcc4",
  positive: "#d62728",
  negative: "#1f2430",
  result: "#f2c14e",
};

/**
 * Canvas scatter with pan/zoom and label/result overlays. Rendering is
 * display-only; selection logic lives in lasso.ts so it stays testable.
 */
export class ScatterView {
  view: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };
  private bounds = { minX: 0, maxX: 1, minY: 0, maxY: 1 };
  private data: ScatterData = { ids: [], xs: new Float64Array(0), ys: new Float64Array(0) };

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly getLabel: (id: number) => 0 | 1 | undefined,
    private readonly isResult: (id: number) => boolean,
  ) {}

  setData(data: ScatterData): void {
    this.data = data;
    let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
    for (let i = 0; i < data.ids.length; i++) {
      minX = Math.min(minX, data.xs[i]);
      maxX = Math.max(maxX, data.xs[i]);
      minY = Math.min(minY, data.ys[i]);
      maxY = Math.max(maxY, data.ys[i]);
    }
    if (!isFinite(minX)) {
      minX = minY = 0;
      maxX = maxY = 1;
    }
    this.bounds = { minX, maxX: maxX || 1, minY, maxY: maxY || 1 };
    this.render();
  }

  toScreen(i: number): Pt {
    const { minX, maxX, minY, maxY } = this.bounds;
    const w = this.canvas.width;
    const h = this.canvas.height;
    const pad = 20;
    const nx = (this.data.xs[i] - minX) / (maxX - minX || 1);
    const ny = (this.data.ys[i] - minY) / (maxY - minY || 1);
    return {
      x: (pad + nx * (w - 2 * pad)) * this.view.scale + this.view.offsetX,
      y: (pad + (1 - ny) * (h - 2 * pad)) * this.view.scale + this.view.offsetY,
    };
  }

  screenPositions(): { ids: number[]; xs: number[]; ys: number[] } {
    const ids = this.data.ids;
    const xs: number[] = new Array(ids.length);
    const ys: number[] = new Array(ids.length);
    for (let i = 0; i < ids.length; i++) {
      const p = this.toScreen(i);
      xs[i] = p.x;
      ys[i] = p.y;
    }
    return { ids, xs, ys };
  }

  pan(dx: number, dy: number): void {
    this.view.offsetX += dx;
    this.view.offsetY += dy;
    this.render();
  }

  zoom(factor: number, cx: number, cy: number): void {
    const next = Math.min(40, Math.max(0.25, this.view.scale * factor));
    const applied = next / this.view.scale;
    this.view.offsetX = cx - (cx - this.view.offsetX) * applied;
    this.view.offsetY = cy - (cy - this.view.offsetY) * applied;
    this.view.scale = next;
    this.render();
  }

  /** Decimate unlabeled points when zoomed out; labels/results always draw. */
  private strideForScale(n: number): number {
    if (this.view.scale >= 1 || n <= 20_000) return 1;
    return Math.ceil((n / 20_000) * (1 / this.view.scale));
  }

  render(polygon: readonly Pt[] = []): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    const n = this.data.ids.length;
    const stride = this.strideForScale(n);
    const r = Math.max(1.5, Math.min(4, 2 * this.view.scale));
    for (let i = 0; i < n; i++) {
      const id = this.data.ids[i];
      const label = this.getLabel(id);
      const hit = this.isResult(id);
      if (label === undefined && !hit && i % stride !== 0) continue;
      const p = this.toScreen(i);
      if (hit) {
        ctx.fillStyle = COLORS.result;
        ctx.beginPath();
        ctx.arc(p.x, p.y, r + 2.5, 0, 2 * Math.PI);
        ctx.fill();
      }
      ctx.fillStyle =
        label === 1 ? COLORS.positive : label === 0 ? COLORS.negative : COLORS.unlabeled;
      ctx.beginPath();
      ctx.arc(p.x, p.y, r, 0, 2 * Math.PI);
      ctx.fill();
    }
    if (polygon.length >= 2) {
      ctx.strokeStyle = "#4878d0";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.moveTo(polygon[0].x, polygon[0].y);
      for (const p of polygon.slice(1)) ctx.lineTo(p.x, p.y);
      ctx.closePath();
      ctx.stroke();
    }
  }
}
