/**
 * Feature backbones: image tensor in, channel-major activation maps out.
 *
 * The built-in "toy" backbone is a single seeded convolution layer. It is
 * not meant to be a good feature extractor, only a deterministic one, so
 * the full pipeline can be exercised and tested without model weights.
 * Real models plug in through the "module:" identifier, which loads a
 * user-provided factory and forwards the requested tap point to it.
 */

import * as path from 'node:path'
import { gaussian, mulberry32 } from './rng'

export class BackboneError extends Error {}

export interface Backbone {
  name: string
  /** Channel count of the emitted activation maps. */
  channels: number
  /** Spatial shape of the maps for a given square input size. */
  mapSize(resize: number): { h: number; w: number }
  /** Interleaved RGB in [0, 1] to channel-major float32 maps. */
  apply(rgb: Float64Array, size: number): Float32Array
}

const TOY_CHANNELS = 16
const TOY_KERNEL = 7
const TOY_STRIDE = 7
// ReLU floor: keeps even an all-black input's maps strictly positive so
// downstream column normalization never sees a zero vector
const TOY_BIAS = 0.1

export function toyBackbone(seed: number): Backbone {
  const draw = gaussian(mulberry32(seed ^ 0x9e3779b9))
  const fanIn = TOY_KERNEL * TOY_KERNEL * 3
  const weights = new Float64Array(TOY_CHANNELS * fanIn)
  for (let i = 0; i < weights.length; i++) {
    weights[i] = draw() / Math.sqrt(fanIn)
  }

  const side = (resize: number): number => {
    if (resize < TOY_KERNEL) {
      throw new BackboneError(`toy backbone needs images of at least ${TOY_KERNEL} pixels`)
    }
    return Math.floor((resize - TOY_KERNEL) / TOY_STRIDE) + 1
  }

  return {
    name: `toy:${seed}`,
    channels: TOY_CHANNELS,
    mapSize: (resize) => ({ h: side(resize), w: side(resize) }),
    apply: (rgb, size) => {
      const dim = side(size)
      const out = new Float32Array(TOY_CHANNELS * dim * dim)
      for (let f = 0; f < TOY_CHANNELS; f++) {
        const base = f * fanIn
        for (let oy = 0; oy < dim; oy++) {
          for (let ox = 0; ox < dim; ox++) {
            let acc = TOY_BIAS
            for (let ky = 0; ky < TOY_KERNEL; ky++) {
              const row = (oy * TOY_STRIDE + ky) * size + ox * TOY_STRIDE
              for (let kx = 0; kx < TOY_KERNEL; kx++) {
                const px = 3 * (row + kx)
                const wx = base + 3 * (ky * TOY_KERNEL + kx)
                acc +=
                  weights[wx] * rgb[px] +
                  weights[wx + 1] * rgb[px + 1] +
                  weights[wx + 2] * rgb[px + 2]
              }
            }
            out[f * dim * dim + oy * dim + ox] = Math.max(acc, 0)
          }
        }
      }
      return out
    },
  }
}

function checkShape(candidate: unknown, source: string): Backbone {
  const b = candidate as Backbone
  if (
    !b ||
    typeof b.name !== 'string' ||
    typeof b.channels !== 'number' ||
    typeof b.mapSize !== 'function' ||
    typeof b.apply !== 'function'
  ) {
    throw new BackboneError(`${source} did not return a backbone object`)
  }
  return b
}

/**
 * Resolve a backbone identifier.
 *
 * "toy" or "toy:SEED" builds the built-in layer; "module:./file.js" loads
 * a CommonJS module whose createBackbone(tap) factory returns the backbone.
 */
export function loadBackbone(identifier: string, tap?: string): Backbone {
  if (identifier === 'toy') {
    return toyBackbone(0)
  }
  if (identifier.startsWith('toy:')) {
    const rest = identifier.slice('toy:'.length)
    const seed = rest === '' ? NaN : Number(rest)
    if (!Number.isInteger(seed) || seed < 0) {
      throw new BackboneError(`bad toy backbone seed: ${rest}`)
    }
    return toyBackbone(seed)
  }
  if (identifier.startsWith('module:')) {
    const file = path.resolve(identifier.slice('module:'.length))
    let mod: { createBackbone?: (tap?: string) => unknown }
    try {
      // eslint-disable-next-line @typescript-eslint/no-var-requires
      mod = require(file)
    } catch (err) {
      throw new BackboneError(`cannot load backbone module ${file}: ${(err as Error).message}`)
    }
    if (typeof mod.createBackbone !== 'function') {
      throw new BackboneError(`backbone module ${file} has no createBackbone factory`)
    }
    return checkShape(mod.createBackbone(tap), file)
  }
  throw new BackboneError(`unknown backbone identifier: ${identifier}`)
}
