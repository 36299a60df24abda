/** Radiance HDR encoding for environment uploads.
 *
 * Writes flat (uncompressed) RGBE scanlines, which every Radiance reader
 * accepts. Values are shared-exponent quantized; powers of two round trip
 * exactly, which is what the constant-gray furnace check relies on.
 */

export function floatToRgbe(r: number, g: number, b: number): [number, number, number, number] {
  const m = Math.max(r, g, b);
  if (m < 1e-32) return [0, 0, 0, 0];
  // Exponent e with max component mantissa in [0.5, 1).
  const e = Math.floor(Math.log2(m)) + 1;
  const scale = Math.pow(2, -e) * 256;
  return [
    Math.min(255, Math.floor(r * scale)),
    Math.min(255, Math.floor(g * scale)),
    Math.min(255, Math.floor(b * scale)),
    e + 128,
  ];
}

export function encodeHdr(
  width: number,
  height: number,
  pixel: (x: number, y: number) => [number, number, number],
): Uint8Array<ArrayBuffer> {
  const header = `#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y ${height} +X ${width}\n`;
  const head = new TextEncoder().encode(header);
  const out = new Uint8Array(head.length + width * height * 4);
  out.set(head, 0);
  let pos = head.length;
  for (let y = 0; y < height; y += 1) {
    for (let x = 0; x < width; x += 1) {
      const [r, g, b] = pixel(x, y);
      const rgbe = floatToRgbe(r, g, b);
      out[pos] = rgbe[0];
      out[pos + 1] = rgbe[1];
      out[pos + 2] = rgbe[2];
      out[pos + 3] = rgbe[3];
      pos += 4;
    }
  }
  return out;
}

/** Constant-gray map: uploading one makes relit shading go flat. */
export function constantGrayHdr(
  width: number,
  height: number,
  value: number,
): Uint8Array<ArrayBuffer> {
  return encodeHdr(width, height, () => [value, value, value]);
}
