// Canvas coordinate mapping: pixels to the normalized [-1,1]^2 the cluster
// expects, y pointing up. One browser wheel notch (100px of deltaY) is one
// unit of zoom delta, wheel-up positive.

export function canvasToNorm(px: number, py: number, w: number, h: number): [number, number] {
  return [(2 * px) / w - 1, 1 - (2 * py) / h];
}

export function wheelToDelta(deltaY: number, deltaMode = 0): number {
  const pixels = deltaMode === 1 ? deltaY * 33 : deltaMode === 2 ? deltaY * 300 : deltaY;
  return -pixels / 100;
}
