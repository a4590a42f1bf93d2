export interface Pt {
  x: number;
  y: number;
}

/** Ray-casting point-in-polygon test. */
export function pointInPolygon(point: Pt, polygon: readonly Pt[]): boolean {
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const xi = polygon[i].x;
    const yi = polygon[i].y;
    const xj = polygon[j].x;
    const yj = polygon[j].y;
    const intersects =
      yi > point.y !== yj > point.y &&
      point.x < ((xj - xi) * (point.y - yi)) / (yj - yi) + xi;
    if (intersects) inside = !inside;
  }
  return inside;
}

/** Ids of the points captured by a lasso polygon (screen coordinates). */
export function lassoSelect(
  ids: readonly number[],
  xs: Float64Array | number[],
  ys: Float64Array | number[],
  polygon: readonly Pt[],
): number[] {
  if (polygon.length < 3) return [];
  const hit: number[] = [];
  for (let i = 0; i < ids.length; i++) {
    if (pointInPolygon({ x: xs[i], y: ys[i] }, polygon)) hit.push(ids[i]);
  }
  return hit;
}
