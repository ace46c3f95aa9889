/**
 * Viridis-style colormap: low values map to purple, high values to yellow,
 * matching the uncertainty heatmap convention on the server's figures.
 */

const ANCHORS: Array<[number, number, number]> = [
  [68, 1, 84], // purple (low)
  [59, 82, 139],
  [33, 145, 140],
  [94, 201, 98],
  [253, 231, 37], // yellow (high)
];

export function colorFor(t: number): [number, number, number] {
  const clamped = Math.min(Math.max(t, 0), 1);
  const scaled = clamped * (ANCHORS.length - 1);
  const i = Math.min(Math.floor(scaled), ANCHORS.length - 2);
  const frac = scaled - i;
  const a = ANCHORS[i];
  const b = ANCHORS[i + 1];
  return [
    Math.round(a[0] + frac * (b[0] - a[0])),
    Math.round(a[1] + frac * (b[1] - a[1])),
    Math.round(a[2] + frac * (b[2] - a[2])),
  ];
}

/** Normalize a value into [0, 1] against the fetched range endpoints. */
export function normalize(value: number, vmin: number, vmax: number): number {
  if (vmax <= vmin) return 0.5;
  return (value - vmin) / (vmax - vmin);
}
