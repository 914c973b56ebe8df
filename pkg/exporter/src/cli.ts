#!/usr/bin/env node
/**
 * Command-line front end for the feature exporter.
 *
 * The export command turns a folder of class subfolders (or an explicit
 * JSON manifest) into a feature-store file. With --evaluate it then shells
 * out to the Python evaluation CLI and prints the headline accuracy, so a
 * folder of images can be scored in one invocation.
 *
 * Exit codes: 0 success, 2 bad arguments or manifest, 3 export or store
 * failure, 4 evaluation failure.
 */

import { spawnSync } from 'node:child_process'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { BackboneError } from './backbone'
import { ExportError, runExport } from './export'
import { ManifestError, parseManifest, readManifest, scanImageFolder } from './manifest'
import { StoreFormatError } from './store'

class UsageError extends Error {}

interface EvalOptions {
  python: string
  ways?: number
  shots?: number
  queries?: number
  episodes?: number
  tau?: number
  pyramid?: number
  iters?: number
  seed?: number
  threads?: number
}

/** Map known failure kinds to exit codes; let real bugs crash loudly. */
function exitForError(err: unknown): never {
  if (err instanceof UsageError || err instanceof ManifestError) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    process.exit(2)
  }
  if (
    err instanceof ExportError ||
    err instanceof StoreFormatError ||
    err instanceof BackboneError
  ) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    process.exit(3)
  }
  throw err
}

function evaluateStore(storePath: string, opts: EvalOptions): void {
  const args = ['-m', 'oblique_fewshot.cli', 'run', '--features', storePath]
  const knobs: [string, number | undefined][] = [
    ['--ways', opts.ways],
    ['--shots', opts.shots],
    ['--queries', opts.queries],
    ['--episodes', opts.episodes],
    ['--tau', opts.tau],
    ['--pyramid', opts.pyramid],
    ['--iters', opts.iters],
    ['--seed', opts.seed],
    ['--threads', opts.threads],
  ]
  for (const [flag, value] of knobs) {
    if (value !== undefined) {
      args.push(flag, String(value))
    }
  }
  const run = spawnSync(opts.python, args, { encoding: 'utf-8' })
  if (run.error) {
    throw new ExportError(`cannot launch ${opts.python}: ${run.error.message}`)
  }
  if (run.status !== 0) {
    process.stderr.write(run.stderr)
    process.exitCode = 4
    return
  }
  const report = JSON.parse(run.stdout)
  const mean = (100 * report.mean_accuracy).toFixed(2)
  const ci = (100 * report.ci95).toFixed(2)
  process.stdout.write(`accuracy: ${mean} ± ${ci} (${report.episodes} episodes)\n`)
}

export function main(argv: string[]): void {
  yargs(argv)
    .scriptName('omfs-export')
    .command(
      ['export', '$0'],
      'extract features from images into a store file',
      (cmd) =>
        cmd
          .option('images', { type: 'string', describe: 'folder with one subfolder per class' })
          .option('manifest', { type: 'string', describe: 'JSON manifest file' })
          .option('output', { type: 'string', describe: 'store file to write' })
          .option('backbone', {
            type: 'string',
            default: 'toy:0',
            describe: 'backbone identifier (toy:SEED or module:FILE)',
          })
          .option('tap', { type: 'string', describe: 'layer tap point for module backbones' })
          .option('resize', { type: 'number', default: 84, describe: 'square resize in pixels' })
          .option('evaluate', {
            type: 'boolean',
            default: false,
            describe: 'run the Python evaluation CLI on the exported store',
          })
          .option('python', { type: 'string', default: 'python3', describe: 'Python interpreter' })
          .option('ways', { type: 'number', describe: 'evaluation: classes per episode' })
          .option('shots', { type: 'number', describe: 'evaluation: support samples per class' })
          .option('queries', { type: 'number', describe: 'evaluation: query samples per class' })
          .option('episodes', { type: 'number', describe: 'evaluation: episode count' })
          .option('tau', { type: 'number', describe: 'evaluation: anchor count minus one' })
          .option('pyramid', { type: 'number', describe: 'evaluation: region count p' })
          .option('iters', { type: 'number', describe: 'evaluation: optimization iterations' })
          .option('seed', { type: 'number', describe: 'evaluation: master RNG seed' })
          .option('threads', { type: 'number', describe: 'evaluation: parallel workers' })
          .conflicts('images', 'manifest')
          .check((args) => {
            if (!args.images && !args.manifest) {
              throw new UsageError('either --images or --manifest is required')
            }
            if (args.images && !args.output) {
              throw new UsageError('--output is required with --images')
            }
            return true
          }),
      (args) => {
        try {
          const manifest = args.manifest
            ? readManifest(args.manifest)
            : parseManifest({
                backbone: args.backbone,
                tap: args.tap,
                resize: args.resize,
                output: args.output,
                classes: scanImageFolder(args.images as string),
              })
          const summary = runExport(manifest)
          for (const failure of summary.skipped) {
            process.stderr.write(`skipped ${failure.path}: ${failure.reason}\n`)
          }
          process.stdout.write(JSON.stringify(summary, null, 2) + '\n')
          if (args.evaluate) {
            evaluateStore(manifest.output, args as unknown as EvalOptions)
          }
        } catch (err) {
          exitForError(err)
        }
      },
    )
    .strict()
    .fail((msg, err) => {
      if (err) {
        exitForError(err)
      }
      process.stderr.write(`error: ${msg}\n`)
      process.exit(2)
    })
    .parseSync()
}

if (require.main === module) {
  main(hideBin(process.argv))
}
