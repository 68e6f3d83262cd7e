/**
 * Feature models the extractor can run images through.
 *
 * `patch-pool` is the built-in deterministic baseline: the image is resized
 * to a fixed square, cut into a grid of patches, and each patch's mean
 * intensity (plus coarse horizontal/vertical gradient means) becomes one
 * feature. It needs no weights and makes extraction fully reproducible,
 * which is what the round-trip tests exercise.
 *
 * Any other model name is treated as a path to a TensorFlow.js graph model
 * (model.json); its pooled output vector is used as the embedding.
 * Grayscale pixels are replicated to three channels and scaled to [0, 1]
 * before inference.
 */

import { GrayImage } from './png'

export interface FeatureModel {
  readonly name: string
  readonly dim: number
  embedBatch(images: GrayImage[]): Promise<Float32Array[]>
}

export function resizeBilinear(image: GrayImage, size: number): Float32Array {
  const out = new Float32Array(size * size)
  const sx = image.width / size
  const sy = image.height / size
  for (let y = 0; y < size; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, image.height - 1)
    const y0 = Math.max(0, Math.floor(fy))
    const y1 = Math.min(image.height - 1, y0 + 1)
    const wy = fy - y0
    for (let x = 0; x < size; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, image.width - 1)
      const x0 = Math.max(0, Math.floor(fx))
      const x1 = Math.min(image.width - 1, x0 + 1)
      const wx = fx - x0
      const p00 = image.pixels[y0 * image.width + x0]
      const p01 = image.pixels[y0 * image.width + x1]
      const p10 = image.pixels[y1 * image.width + x0]
      const p11 = image.pixels[y1 * image.width + x1]
      const top = p00 * (1 - wx) + p01 * wx
      const bottom = p10 * (1 - wx) + p11 * wx
      out[y * size + x] = (top * (1 - wy) + bottom * wy) / 255
    }
  }
  return out
}

export class PatchPoolModel implements FeatureModel {
  readonly name = 'patch-pool'
  readonly dim: number
  private readonly inputSize: number
  private readonly grid: number

  constructor(grid = 16, inputSize = 64) {
    if (inputSize % grid !== 0) {
      throw new Error('input size must be a multiple of the patch grid')
    }
    this.grid = grid
    this.inputSize = inputSize
    this.dim = 3 * grid * grid
  }

  async embedBatch(images: GrayImage[]): Promise<Float32Array[]> {
    return images.map((img) => this.embedOne(img))
  }

  private embedOne(image: GrayImage): Float32Array {
    const size = this.inputSize
    const grid = this.grid
    const patch = size / grid
    const resized = resizeBilinear(image, size)
    const features = new Float32Array(this.dim)
    for (let gy = 0; gy < grid; gy++) {
      for (let gx = 0; gx < grid; gx++) {
        let mean = 0
        let dx = 0
        let dy = 0
        for (let y = gy * patch; y < (gy + 1) * patch; y++) {
          for (let x = gx * patch; x < (gx + 1) * patch; x++) {
            const v = resized[y * size + x]
            mean += v
            if (x + 1 < size) dx += resized[y * size + x + 1] - v
            if (y + 1 < size) dy += resized[(y + 1) * size + x] - v
          }
        }
        const n = patch * patch
        const base = (gy * grid + gx) * 3
        features[base] = mean / n
        features[base + 1] = dx / n
        features[base + 2] = dy / n
      }
    }
    return features
  }
}

export class TfjsGraphModel implements FeatureModel {
  readonly name: string
  readonly dim: number
  private readonly model: any
  private readonly tf: any
  private readonly inputSize: number

  private constructor(tf: any, model: any, name: string, dim: number, inputSize: number) {
    this.tf = tf
    this.model = model
    this.name = name
    this.dim = dim
    this.inputSize = inputSize
  }

  static async load(modelPath: string, inputSize = 224): Promise<TfjsGraphModel> {
    const tf = require('@tensorflow/tfjs')
    const { pathToFileURL } = require('url')
    const url = modelPath.startsWith('http') ? modelPath : pathToFileURL(modelPath).href
    const model = await tf.loadGraphModel(url)
    const probeShape = [1, inputSize, inputSize, 3]
    const probe = tf.zeros(probeShape)
    const out = model.predict(probe)
    const pooled = Array.isArray(out) ? out[0] : out
    const dim = pooled.size / pooled.shape[0]
    tf.dispose([probe, out])
    if (!dim) {
      throw new Error(`model at ${modelPath} produced a zero-width embedding`)
    }
    return new TfjsGraphModel(tf, model, modelPath, dim, inputSize)
  }

  async embedBatch(images: GrayImage[]): Promise<Float32Array[]> {
    const tf = this.tf
    const size = this.inputSize
    const batch = tf.tidy(() => {
      const tensors = images.map((img) => {
        const gray = resizeBilinear(img, size)
        const mono = tf.tensor3d(gray, [size, size, 1])
        return tf.tile(mono, [1, 1, 3]) // grayscale replicated to 3 channels
      })
      return tf.stack(tensors)
    })
    const out = this.model.predict(batch)
    const pooled = Array.isArray(out) ? out[0] : out
    const flat: Float32Array = await pooled.data()
    tf.dispose([batch, out])
    const rows: Float32Array[] = []
    for (let i = 0; i < images.length; i++) {
      rows.push(flat.slice(i * this.dim, (i + 1) * this.dim))
    }
    return rows
  }
}

export async function loadModel(spec: string): Promise<FeatureModel> {
  if (spec === 'patch-pool') {
    return new PatchPoolModel()
  }
  return TfjsGraphModel.load(spec)
}
