/**
 * Binary blob writer matching the engine's fixture contract byte for byte:
 * magic "PRSM" | version u16 LE | dtype u16 LE (1 = float32) |
 * rows u32 LE | cols u32 LE | row-major little-endian float32 data.
 */

export const BLOB_MAGIC = "PRSM";
export const BLOB_VERSION = 1;
export const DTYPE_F32 = 1;

export function packBlob(rows: number, cols: number, data: Float64Array | number[]): Buffer {
  if (rows * cols !== data.length) {
    throw new Error(`blob shape ${rows}x${cols} does not match ${data.length} values`);
  }
  const buf = Buffer.alloc(16 + rows * cols * 4);
  buf.write(BLOB_MAGIC, 0, "ascii");
  buf.writeUInt16LE(BLOB_VERSION, 4);
  buf.writeUInt16LE(DTYPE_F32, 6);
  buf.writeUInt32LE(rows, 8);
  buf.writeUInt32LE(cols, 12);
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(Math.fround(data[i] as number), 16 + i * 4);
  }
  return buf;
}

export function packMatrix(matrix: Float64Array[], cols: number): Buffer {
  const flat = new Float64Array(matrix.length * cols);
  matrix.forEach((row, i) => {
    if (row.length !== cols) {
      throw new Error(`row ${i} has ${row.length} values, expected ${cols}`);
    }
    flat.set(row, i * cols);
  });
  return packBlob(matrix.length, cols, flat);
}

export function unpackBlob(buf: Buffer): { rows: number; cols: number; data: Float32Array } {
  if (buf.toString("ascii", 0, 4) !== BLOB_MAGIC) throw new Error("bad blob magic");
  if (buf.readUInt16LE(4) !== BLOB_VERSION || buf.readUInt16LE(6) !== DTYPE_F32) {
    throw new Error("unsupported blob version/dtype");
  }
  const rows = buf.readUInt32LE(8);
  const cols = buf.readUInt32LE(12);
  const data = new Float32Array(rows * cols);
  for (let i = 0; i < data.length; i++) data[i] = buf.readFloatLE(16 + i * 4);
  return { rows, cols, data };
}
