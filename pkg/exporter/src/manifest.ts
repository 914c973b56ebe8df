/**
 * Export manifest: what to run the pipeline on and where to put the result.
 *
 * A manifest can be written by hand as JSON or derived from an image folder
 * whose first level of subfolders names the classes. Scanning is sorted so
 * the same folder always yields the same manifest, which in turn keeps the
 * exported bytes stable.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import { z } from 'zod'

export class ManifestError extends Error {}

const classEntry = z.object({
  name: z.string().min(1),
  images: z.array(z.string().min(1)).min(1),
})

export const manifestSchema = z.object({
  backbone: z.string().min(1).default('toy:0'),
  tap: z.string().optional(),
  resize: z.number().int().min(7).default(84),
  output: z.string().min(1),
  classes: z.array(classEntry).min(1),
})

export type ExportManifest = z.infer<typeof manifestSchema>

export function parseManifest(value: unknown): ExportManifest {
  const result = manifestSchema.safeParse(value)
  if (!result.success) {
    const issue = result.error.issues[0]
    const where = issue.path.join('.') || 'manifest'
    throw new ManifestError(`invalid manifest: ${where}: ${issue.message}`)
  }
  const names = new Set<string>()
  for (const cls of result.data.classes) {
    if (names.has(cls.name)) {
      throw new ManifestError(`invalid manifest: duplicate class name: ${cls.name}`)
    }
    names.add(cls.name)
  }
  return result.data
}

export function readManifest(file: string): ExportManifest {
  let text: string
  try {
    text = fs.readFileSync(file, 'utf-8')
  } catch (err) {
    throw new ManifestError(`cannot read manifest ${file}: ${(err as Error).message}`)
  }
  let value: unknown
  try {
    value = JSON.parse(text)
  } catch (err) {
    throw new ManifestError(`manifest ${file} is not valid JSON: ${(err as Error).message}`)
  }
  return parseManifest(value)
}

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg'])

/**
 * Build the class list for a manifest from a folder of class subfolders.
 * Classes and files are sorted; non-image files are ignored.
 */
export function scanImageFolder(root: string): ExportManifest['classes'] {
  let entries: fs.Dirent[]
  try {
    entries = fs.readdirSync(root, { withFileTypes: true })
  } catch (err) {
    throw new ManifestError(`cannot scan ${root}: ${(err as Error).message}`)
  }
  const classes: ExportManifest['classes'] = []
  const dirs = entries.filter((e) => e.isDirectory()).sort((a, b) => (a.name < b.name ? -1 : 1))
  for (const dir of dirs) {
    const classDir = path.join(root, dir.name)
    const images = fs
      .readdirSync(classDir, { withFileTypes: true })
      .filter((e) => e.isFile() && IMAGE_EXTENSIONS.has(path.extname(e.name).toLowerCase()))
      .map((e) => path.join(classDir, e.name))
      .sort()
    if (images.length === 0) {
      throw new ManifestError(`class folder ${classDir} has no images`)
    }
    classes.push({ name: dir.name, images })
  }
  if (classes.length === 0) {
    throw new ManifestError(`${root} has no class subfolders`)
  }
  return classes
}
