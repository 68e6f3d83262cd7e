#!/usr/bin/env node
/**
 * shapey-extract: embed an image set and write shapey-format files.
 *
 *   extract --model patch-pool --images renders/ --manifest manifest.json -o out/resnet
 *
 * The output pair (<prefix>.shpy, <prefix>.idx) is checked with
 * `shapey validate` on the Python side.
 */

import { parseArgs } from 'util'
import { extract } from './extract'
import { loadModel } from './model'

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      model: { type: 'string', default: 'patch-pool' },
      images: { type: 'string' },
      manifest: { type: 'string' },
      output: { type: 'string', short: 'o' },
      batch: { type: 'string', default: '32' },
    },
  })
  if (!values.images || !values.manifest || !values.output) {
    console.error(
      'usage: shapey-extract --model <name|model.json> --images <dir> --manifest <file> -o <prefix>',
    )
    return 2
  }
  const batchSize = parseInt(values.batch as string, 10)
  if (!Number.isFinite(batchSize) || batchSize < 1) {
    console.error(`invalid --batch ${values.batch}`)
    return 2
  }
  try {
    const model = await loadModel(values.model as string)
    const result = await extract({
      model,
      imagesDir: values.images as string,
      manifestPath: values.manifest as string,
      outputPrefix: values.output as string,
      batchSize,
    })
    console.log(
      `wrote ${result.rows} x ${result.dim} embeddings (${model.name}) to ` +
        `${result.embeddingsPath}, ${result.indexPath}`,
    )
    return 0
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`)
    return 1
  }
}

main().then((code) => {
  process.exitCode = code
})
