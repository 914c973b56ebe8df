/**
 * The export pipeline: images in, feature store out.
 *
 * Every image is decoded, resized, pushed through the backbone, and written
 * as one raw record under its class. Images that fail to decode are skipped
 * and reported; once more than five percent of the manifest fails, the run
 * aborts instead of producing a store that silently lost data.
 */

import { Backbone, loadBackbone } from './backbone'
import { decodeImage, ImageDecodeError, resizeBilinear } from './image'
import { ExportManifest } from './manifest'
import { FeatureStore, writeStore } from './store'

export interface ImageFailure {
  path: string
  reason: string
}

export interface ExportSummary {
  output: string
  backbone: string
  channels: number
  mapHeight: number
  mapWidth: number
  classes: number
  records: number
  skipped: ImageFailure[]
}

export class ExportError extends Error {
  constructor(
    message: string,
    public failures: ImageFailure[] = [],
  ) {
    super(message)
  }
}

// tolerated decode failures: at most 5% of the manifest, checked exactly
// in integers (20 * failures > total aborts)
const FAILURE_BUDGET_DENOMINATOR = 20

function describeFailures(failures: ImageFailure[]): string {
  return failures.map((f) => `  ${f.path}: ${f.reason}`).join('\n')
}

export function runExport(manifest: ExportManifest): ExportSummary {
  const backbone: Backbone = loadBackbone(manifest.backbone, manifest.tap)
  const { h, w } = backbone.mapSize(manifest.resize)
  const total = manifest.classes.reduce((sum, cls) => sum + cls.images.length, 0)

  const failures: ImageFailure[] = []
  const store: FeatureStore = {
    pooled: false,
    split: false,
    n: backbone.channels,
    h,
    w,
    p: 0,
    classes: [],
  }
  for (const cls of manifest.classes) {
    const records: Float32Array[] = []
    for (const file of cls.images) {
      let maps: Float32Array
      try {
        const rgb = resizeBilinear(decodeImage(file), manifest.resize)
        maps = backbone.apply(rgb, manifest.resize)
      } catch (err) {
        if (!(err instanceof ImageDecodeError)) {
          throw err
        }
        failures.push({ path: file, reason: err.message })
        if (failures.length * FAILURE_BUDGET_DENOMINATOR > total) {
          throw new ExportError(
            `aborting: ${failures.length} of ${total} images failed to decode\n` +
              describeFailures(failures),
            failures,
          )
        }
        continue
      }
      records.push(maps)
    }
    if (records.length === 0) {
      throw new ExportError(`class ${cls.name} has no decodable images`, failures)
    }
    store.classes.push({ name: cls.name, records })
  }

  try {
    writeStore(manifest.output, store)
  } catch (err) {
    throw new ExportError(`cannot write ${manifest.output}: ${(err as Error).message}`, failures)
  }
  return {
    output: manifest.output,
    backbone: backbone.name,
    channels: backbone.channels,
    mapHeight: h,
    mapWidth: w,
    classes: store.classes.length,
    records: store.classes.reduce((sum, cls) => sum + cls.records.length, 0),
    skipped: failures,
  }
}
