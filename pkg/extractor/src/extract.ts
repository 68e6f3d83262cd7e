/**
 * Extraction job: run every manifest image through a feature model and
 * write the embedding + index pair in manifest row order.
 */

import * as fs from 'fs'
import * as path from 'path'
import { FeatureModel } from './model'
import { decodeToGray } from './png'
import { writeEmbeddings } from './shpy'

export interface ExtractionJob {
  model: FeatureModel
  imagesDir: string
  manifestPath: string
  outputPrefix: string
  batchSize: number
}

export interface ExtractionResult {
  embeddingsPath: string
  indexPath: string
  rows: number
  dim: number
}

export function readManifestIds(manifestPath: string): string[] {
  const payload = JSON.parse(fs.readFileSync(manifestPath, 'utf8'))
  if (!Array.isArray(payload.ids) || payload.ids.length === 0) {
    throw new Error(`${manifestPath}: no ids in manifest`)
  }
  return payload.ids as string[]
}

export async function extract(job: ExtractionJob): Promise<ExtractionResult> {
  const ids = readManifestIds(job.manifestPath)
  const missing = ids.filter(
    (id) => !fs.existsSync(path.join(job.imagesDir, `${id}.png`)),
  )
  if (missing.length > 0) {
    const shown = missing.slice(0, 10).join(', ')
    const extra = missing.length > 10 ? ` and ${missing.length - 10} more` : ''
    throw new Error(`missing image files for ids: ${shown}${extra}`)
  }
  if (job.model.dim <= 0) {
    throw new Error(`model ${job.model.name} has zero feature width`)
  }

  const rows: Float32Array[] = []
  for (let start = 0; start < ids.length; start += job.batchSize) {
    const batchIds = ids.slice(start, start + job.batchSize)
    const images = batchIds.map((id) =>
      decodeToGray(fs.readFileSync(path.join(job.imagesDir, `${id}.png`))),
    )
    const features = await job.model.embedBatch(images)
    features.forEach((row) => {
      if (row.length !== job.model.dim) {
        throw new Error(
          `model returned dim ${row.length}, expected ${job.model.dim}`,
        )
      }
      rows.push(row)
    })
  }

  const embeddingsPath = `${job.outputPrefix}.shpy`
  const indexPath = `${job.outputPrefix}.idx`
  writeEmbeddings(embeddingsPath, indexPath, rows, ids, job.model.dim)
  return { embeddingsPath, indexPath, rows: rows.length, dim: job.model.dim }
}
