/**
 * Writer for the shapey embedding file pair.
 *
 * Binary format (little-endian): magic "SHPY", version u32 = 1,
 * row count u64, dim u32, then count * dim float32 values row-major.
 * The sidecar index file is UTF-8 with one image id per line; line k
 * names row k.
 */

import * as fs from 'fs'

export const MAGIC = 'SHPY'
export const VERSION = 1
const HEADER_BYTES = 4 + 4 + 8 + 4

export function encodeEmbeddings(rows: Float32Array[], dim: number): Buffer {
  const header = Buffer.alloc(HEADER_BYTES)
  header.write(MAGIC, 0, 'ascii')
  header.writeUInt32LE(VERSION, 4)
  header.writeBigUInt64LE(BigInt(rows.length), 8)
  header.writeUInt32LE(dim, 16)
  const body = Buffer.alloc(rows.length * dim * 4)
  rows.forEach((row, r) => {
    if (row.length !== dim) {
      throw new Error(`row ${r} has dim ${row.length}, expected ${dim}`)
    }
    for (let d = 0; d < dim; d++) {
      body.writeFloatLE(row[d], (r * dim + d) * 4)
    }
  })
  return Buffer.concat([header, body])
}

export function writeEmbeddings(
  embPath: string,
  indexPath: string,
  rows: Float32Array[],
  ids: string[],
  dim: number,
): void {
  if (rows.length !== ids.length) {
    throw new Error(`${rows.length} rows but ${ids.length} ids`)
  }
  fs.writeFileSync(embPath, encodeEmbeddings(rows, dim))
  fs.writeFileSync(indexPath, ids.map((s) => s + '\n').join(''), 'utf8')
}

/** Read back header + rows; used by the extractor's own tests. */
export function readEmbeddings(embPath: string): { count: number; dim: number; data: Float32Array } {
  const buf = fs.readFileSync(embPath)
  if (buf.subarray(0, 4).toString('ascii') !== MAGIC) {
    throw new Error(`${embPath}: bad magic`)
  }
  if (buf.readUInt32LE(4) !== VERSION) {
    throw new Error(`${embPath}: unsupported version`)
  }
  const count = Number(buf.readBigUInt64LE(8))
  const dim = buf.readUInt32LE(16)
  const expected = HEADER_BYTES + count * dim * 4
  if (buf.length !== expected) {
    throw new Error(`${embPath}: expected ${expected} bytes, found ${buf.length}`)
  }
  const data = new Float32Array(count * dim)
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(HEADER_BYTES + i * 4)
  }
  return { count, dim, data }
}
