import { DecodedImage } from './image'

export interface FeatureModel {
  id: string
  dim: number
  embed(image: DecodedImage): Float32Array
}

// deterministic PRNG (mulberry32); float64 arithmetic is IEEE-defined, so
// the same seed gives the same projection on every platform
function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

const GRID = 4 // pooling grid; 4x4x3 = 48 pooled channels

/**
 * Deterministic built-in backbone: mean-pool the image on a coarse grid,
 * then project the pooled channels through a fixed seeded random matrix
 * with a tanh squash. No downloads, bit-stable across runs.
 */
class BuiltinModel implements FeatureModel {
  readonly id: string
  readonly dim: number
  private readonly projection: Float64Array

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 1 || dim > 4096) {
      throw new Error(`invalid builtin model dim ${dim}`)
    }
    this.id = `builtin:${dim}`
    this.dim = dim
    const rand = mulberry32(0x48494445) // fixed seed tied to the format magic
    const pooled = GRID * GRID * 3
    this.projection = new Float64Array(pooled * dim)
    for (let i = 0; i < this.projection.length; i++) {
      // approximately normal via sum of uniforms
      this.projection[i] =
        (rand() + rand() + rand() + rand() - 2) / Math.sqrt(pooled / 3)
    }
  }

  embed(image: DecodedImage): Float32Array {
    const pooled = new Float64Array(GRID * GRID * 3)
    const counts = new Float64Array(GRID * GRID)
    for (let y = 0; y < image.height; y++) {
      const gy = Math.min(GRID - 1, Math.floor((y * GRID) / image.height))
      for (let x = 0; x < image.width; x++) {
        const gx = Math.min(GRID - 1, Math.floor((x * GRID) / image.width))
        const cell = gy * GRID + gx
        const p = (y * image.width + x) * 3
        pooled[cell * 3] += image.rgb[p]
        pooled[cell * 3 + 1] += image.rgb[p + 1]
        pooled[cell * 3 + 2] += image.rgb[p + 2]
        counts[cell] += 1
      }
    }
    for (let cell = 0; cell < GRID * GRID; cell++) {
      const n = counts[cell] || 1
      pooled[cell * 3] /= n
      pooled[cell * 3 + 1] /= n
      pooled[cell * 3 + 2] /= n
    }
    const out = new Float32Array(this.dim)
    for (let j = 0; j < this.dim; j++) {
      let acc = 0
      for (let i = 0; i < pooled.length; i++) {
        acc += pooled[i] * this.projection[i * this.dim + j]
      }
      out[j] = Math.tanh(acc)
    }
    return out
  }
}

export function loadModel(id: string): FeatureModel {
  const builtin = /^builtin:(\d+)$/.exec(id)
  if (builtin) {
    return new BuiltinModel(parseInt(builtin[1], 10))
  }
  // anything else would need an external model hub; failing to load a
  // requested model is fatal by contract
  throw new Error(
    `model '${id}' is not available; use 'builtin:<dim>' for the ` +
    'deterministic built-in backbone')
}
