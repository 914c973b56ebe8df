/**
 * Deterministic PRNG for backbone weight initialization.
 *
 * Exported stores must be byte-identical across runs and machines, so the
 * generator is fixed here rather than delegated to Math.random. mulberry32
 * plus Box-Muller gives reproducible IEEE-754 doubles everywhere.
 */

export type Rng = () => number

/** Uniform [0, 1) stream from a 32-bit seed. */
export function mulberry32(seed: number): Rng {
  let state = seed >>> 0
  return () => {
    state = (state + 0x6d2b79f5) >>> 0
    let t = state
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

/** Standard normal draws via Box-Muller on the uniform stream. */
export function gaussian(rng: Rng): Rng {
  let spare: number | null = null
  return () => {
    if (spare !== null) {
      const value = spare
      spare = null
      return value
    }
    // u must stay away from zero for the log
    const u = rng() + Number.EPSILON
    const v = rng()
    const radius = Math.sqrt(-2 * Math.log(u))
    spare = radius * Math.sin(2 * Math.PI * v)
    return radius * Math.cos(2 * Math.PI * v)
  }
}
