import { describe, expect, test } from "vitest";

import { lassoSelect, pointInPolygon } from "../src/lasso.js";

const square = [
  { x: 0, y: 0 },
  { x: 10, y: 0 },
  { x: 10, y: 10 },
  { x: 0, y: 10 },
];

describe("pointInPolygon", () => {
  test("inside and outside a square", () => {
    expect(pointInPolygon({ x: 5, y: 5 }, square)).toBe(true);
    expect(pointInPolygon({ x: 15, y: 5 }, square)).toBe(false);
    expect(pointInPolygon({ x: -1, y: -1 }, square)).toBe(false);
  });

  test("concave polygon", () => {
    const arrow = [
      { x: 0, y: 0 },
      { x: 10, y: 0 },
      { x: 10, y: 10 },
      { x: 5, y: 4 },
      { x: 0, y: 10 },
    ];
    expect(pointInPolygon({ x: 5, y: 2 }, arrow)).toBe(true);
    expect(pointInPolygon({ x: 5, y: 8 }, arrow)).toBe(false);
  });
});

describe("lassoSelect", () => {
  test("captures only points inside", () => {
    const ids = [11, 22, 33];
    const xs = [5, 20, 9];
    const ys = [5, 5, 9];
    expect(lassoSelect(ids, xs, ys, square)).toEqual([11, 33]);
  });

  test("degenerate polygon selects nothing", () => {
    expect(lassoSelect([1], [5], [5], square.slice(0, 2))).toEqual([]);
  });
});
