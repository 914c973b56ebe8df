/**
 * Image loading and resizing for the export pipeline.
 *
 * PNG and JPEG only, dispatched on file signature rather than extension so
 * mislabelled files fail with an honest decode error. Output of the resize
 * step is interleaved RGB in [0, 1], which is what backbones consume.
 */

import * as fs from 'node:fs'
import { PNG } from 'pngjs'
import * as jpeg from 'jpeg-js'

export class ImageDecodeError extends Error {}

export interface RgbaImage {
  width: number
  height: number
  /** Interleaved RGBA, 8 bits per channel. */
  data: Uint8Array
}

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47])
const JPEG_SIGNATURE = Buffer.from([0xff, 0xd8])

export function decodeImage(path: string): RgbaImage {
  let raw: Buffer
  try {
    raw = fs.readFileSync(path)
  } catch (err) {
    throw new ImageDecodeError(`cannot read ${path}: ${(err as Error).message}`)
  }
  try {
    if (raw.subarray(0, 4).equals(PNG_SIGNATURE)) {
      const png = PNG.sync.read(raw)
      return { width: png.width, height: png.height, data: png.data }
    }
    if (raw.subarray(0, 2).equals(JPEG_SIGNATURE)) {
      const img = jpeg.decode(raw, { useTArray: true, formatAsRGBA: true })
      return { width: img.width, height: img.height, data: img.data }
    }
  } catch (err) {
    throw new ImageDecodeError(`cannot decode ${path}: ${(err as Error).message}`)
  }
  throw new ImageDecodeError(`cannot decode ${path}: not a PNG or JPEG`)
}

/**
 * Bilinear resample to a square RGB float image.
 *
 * Sample positions use the half-pixel convention, so a constant image stays
 * exactly constant and downscaling averages neighbourhoods symmetrically.
 * Alpha is dropped; returned array is interleaved RGB, length size*size*3.
 */
export function resizeBilinear(image: RgbaImage, size: number): Float64Array {
  if (size < 1) {
    throw new RangeError(`target size must be positive, got ${size}`)
  }
  if (image.width < 1 || image.height < 1) {
    throw new ImageDecodeError('empty image')
  }
  const out = new Float64Array(size * size * 3)
  const scaleX = image.width / size
  const scaleY = image.height / size
  for (let y = 0; y < size; y++) {
    const srcY = Math.min(Math.max((y + 0.5) * scaleY - 0.5, 0), image.height - 1)
    const y0 = Math.floor(srcY)
    const y1 = Math.min(y0 + 1, image.height - 1)
    const fy = srcY - y0
    for (let x = 0; x < size; x++) {
      const srcX = Math.min(Math.max((x + 0.5) * scaleX - 0.5, 0), image.width - 1)
      const x0 = Math.floor(srcX)
      const x1 = Math.min(x0 + 1, image.width - 1)
      const fx = srcX - x0
      for (let c = 0; c < 3; c++) {
        const p00 = image.data[4 * (y0 * image.width + x0) + c]
        const p01 = image.data[4 * (y0 * image.width + x1) + c]
        const p10 = image.data[4 * (y1 * image.width + x0) + c]
        const p11 = image.data[4 * (y1 * image.width + x1) + c]
        const top = p00 + (p01 - p00) * fx
        const bottom = p10 + (p11 - p10) * fx
        out[3 * (y * size + x) + c] = (top + (bottom - top) * fy) / 255
      }
    }
  }
  return out
}
