/**
 * Minimal PNG codec covering the image set's needs: 8-bit grayscale,
 * RGB, and RGBA, non-interlaced. Decoding returns grayscale pixels
 * (luma-converted when the source has color channels); encoding always
 * writes 8-bit grayscale. Uses node:zlib, no external dependencies.
 */

import * as zlib from 'zlib'

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])

export interface GrayImage {
  width: number
  height: number
  /** row-major luma bytes, length = width * height */
  pixels: Uint8Array
}

function crc32(buf: Buffer): number {
  let crc = ~0
  for (let i = 0; i < buf.length; i++) {
    crc ^= buf[i]
    for (let k = 0; k < 8; k++) {
      crc = (crc >>> 1) ^ (0xedb88320 & -(crc & 1))
    }
  }
  return ~crc >>> 0
}

function chunk(type: string, data: Buffer): Buffer {
  const head = Buffer.alloc(8)
  head.writeUInt32BE(data.length, 0)
  head.write(type, 4, 'ascii')
  const crc = Buffer.alloc(4)
  crc.writeUInt32BE(crc32(Buffer.concat([head.subarray(4), data])), 0)
  return Buffer.concat([head, data, crc])
}

export function encodeGray(image: GrayImage): Buffer {
  const { width, height, pixels } = image
  if (pixels.length !== width * height) {
    throw new Error('pixel buffer does not match dimensions')
  }
  const ihdr = Buffer.alloc(13)
  ihdr.writeUInt32BE(width, 0)
  ihdr.writeUInt32BE(height, 4)
  ihdr.writeUInt8(8, 8) // bit depth
  ihdr.writeUInt8(0, 9) // color type: grayscale
  // compression, filter, interlace all zero
  const raw = Buffer.alloc(height * (width + 1))
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0 // filter type none
    for (let x = 0; x < width; x++) {
      raw[y * (width + 1) + 1 + x] = pixels[y * width + x]
    }
  }
  const idat = zlib.deflateSync(raw, { level: 9 })
  return Buffer.concat([
    SIGNATURE,
    chunk('IHDR', ihdr),
    chunk('IDAT', idat),
    chunk('IEND', Buffer.alloc(0)),
  ])
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c
  const pa = Math.abs(p - a)
  const pb = Math.abs(p - b)
  const pc = Math.abs(p - c)
  if (pa <= pb && pa <= pc) return a
  if (pb <= pc) return b
  return c
}

export function decodeToGray(buf: Buffer): GrayImage {
  if (!buf.subarray(0, 8).equals(SIGNATURE)) {
    throw new Error('not a PNG file')
  }
  let width = 0
  let height = 0
  let colorType = 0
  let bitDepth = 0
  let interlace = 0
  const idat: Buffer[] = []
  let off = 8
  while (off < buf.length) {
    const len = buf.readUInt32BE(off)
    const type = buf.subarray(off + 4, off + 8).toString('ascii')
    const data = buf.subarray(off + 8, off + 8 + len)
    if (type === 'IHDR') {
      width = data.readUInt32BE(0)
      height = data.readUInt32BE(4)
      bitDepth = data.readUInt8(8)
      colorType = data.readUInt8(9)
      interlace = data.readUInt8(12)
    } else if (type === 'IDAT') {
      idat.push(Buffer.from(data))
    } else if (type === 'IEND') {
      break
    }
    off += 12 + len
  }
  if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`)
  if (interlace !== 0) throw new Error('interlaced PNGs not supported')
  const channels = { 0: 1, 2: 3, 4: 2, 6: 4 }[colorType]
  if (channels === undefined) throw new Error(`unsupported color type ${colorType}`)

  const raw = zlib.inflateSync(Buffer.concat(idat))
  const stride = width * channels
  if (raw.length !== height * (stride + 1)) {
    throw new Error('unexpected PNG data length')
  }
  const out = new Uint8Array(height * stride)
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)]
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1))
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? out[y * stride + x - channels] : 0
      const up = y > 0 ? out[(y - 1) * stride + x] : 0
      const upLeft = y > 0 && x >= channels ? out[(y - 1) * stride + x - channels] : 0
      let v = line[x]
      switch (filter) {
        case 0:
          break
        case 1:
          v += left
          break
        case 2:
          v += up
          break
        case 3:
          v += (left + up) >> 1
          break
        case 4:
          v += paeth(left, up, upLeft)
          break
        default:
          throw new Error(`unsupported filter ${filter}`)
      }
      out[y * stride + x] = v & 0xff
    }
  }
  const pixels = new Uint8Array(width * height)
  for (let i = 0; i < width * height; i++) {
    if (channels === 1) {
      pixels[i] = out[i]
    } else if (channels === 2) {
      pixels[i] = out[i * 2]
    } else {
      const r = out[i * channels]
      const g = out[i * channels + 1]
      const b = out[i * channels + 2]
      pixels[i] = Math.round(0.299 * r + 0.587 * g + 0.114 * b)
    }
  }
  return { width, height, pixels }
}
