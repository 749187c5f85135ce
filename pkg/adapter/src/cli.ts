/**
 * Command line for the extraction adapter.
 *
 *   capture   --out DIR [--seed N] [--layers 0,1] [--timesteps 0,2]
 *             [--streams target,source] [--no-head-average]
 *             [--instruction TEXT] [--selected 1,3] [--task NAME]
 *             [--n-txt N] [--grid-h N] [--grid-w N] [--d N]
 *             [--n-layers N] [--n-timesteps N] [--n-heads N]
 *   intervene --out DIR --masks-dir DIR --apply-at 1,3 [--image PATH]
 *             [same model flags]
 */

import { DEFAULT_MODEL, ModelConfig } from './model.js'
import { HookConfig, captureRun } from './capture.js'
import { interveneRun } from './intervene.js'

function parseArgs (argv: string[]): Map<string, string | boolean> {
  const out = new Map<string, string | boolean>()
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    if (!arg.startsWith('--')) throw new Error(`unexpected argument ${arg}`)
    const key = arg.slice(2)
    if (i + 1 < argv.length && !argv[i + 1].startsWith('--')) {
      out.set(key, argv[++i])
    } else {
      out.set(key, true)
    }
  }
  return out
}

function intList (value: string | boolean | undefined): number[] | undefined {
  if (typeof value !== 'string') return undefined
  return value.split(',').filter(s => s !== '').map(s => {
    const n = Number(s)
    if (!Number.isInteger(n)) throw new Error(`expected integer list, got ${value}`)
    return n
  })
}

function intOr (value: string | boolean | undefined, fallback: number): number {
  if (typeof value !== 'string') return fallback
  const n = Number(value)
  if (!Number.isInteger(n)) throw new Error(`expected integer, got ${value}`)
  return n
}

function modelConfig (args: Map<string, string | boolean>): ModelConfig {
  return {
    seed: intOr(args.get('seed'), DEFAULT_MODEL.seed),
    nTxt: intOr(args.get('n-txt'), DEFAULT_MODEL.nTxt),
    gridH: intOr(args.get('grid-h'), DEFAULT_MODEL.gridH),
    gridW: intOr(args.get('grid-w'), DEFAULT_MODEL.gridW),
    d: intOr(args.get('d'), DEFAULT_MODEL.d),
    nLayers: intOr(args.get('n-layers'), DEFAULT_MODEL.nLayers),
    nTimesteps: intOr(args.get('n-timesteps'), DEFAULT_MODEL.nTimesteps),
    nHeads: intOr(args.get('n-heads'), DEFAULT_MODEL.nHeads)
  }
}

function hookConfig (args: Map<string, string | boolean>): HookConfig {
  const out = args.get('out')
  if (typeof out !== 'string') throw new Error('--out DIR is required')
  const streams = typeof args.get('streams') === 'string'
    ? (args.get('streams') as string).split(',') as Array<'target' | 'source'>
    : undefined
  return {
    model: modelConfig(args),
    outDir: out,
    layers: intList(args.get('layers')),
    timesteps: intList(args.get('timesteps')),
    streams,
    headAverage: args.get('no-head-average') === true ? false : undefined,
    instruction: typeof args.get('instruction') === 'string'
      ? args.get('instruction') as string : undefined,
    selectedTextIndices: intList(args.get('selected')),
    task: typeof args.get('task') === 'string' ? args.get('task') as string : undefined
  }
}

export function main (argv: string[]): number {
  const [command, ...rest] = argv
  try {
    if (command === 'capture') {
      const cfg = hookConfig(parseArgs(rest))
      const result = captureRun(cfg)
      console.log(`captured record store at ${result.outDir}`)
      return 0
    }
    if (command === 'intervene') {
      const args = parseArgs(rest)
      const cfg = hookConfig(args)
      const masksDir = args.get('masks-dir')
      const applyAt = intList(args.get('apply-at'))
      if (typeof masksDir !== 'string' || applyAt === undefined) {
        throw new Error('intervene requires --masks-dir DIR and --apply-at LIST')
      }
      const image = typeof args.get('image') === 'string'
        ? args.get('image') as string : undefined
      const result = interveneRun(cfg, { applyAt, masksDir }, image)
      console.log(`blended at steps [${result.appliedSteps.join(', ')}] into ${result.outDir}`)
      return 0
    }
    console.error('usage: cli.js <capture|intervene> [flags]')
    return 2
  } catch (err) {
    console.error(String(err))
    return 1
  }
}

process.exit(main(process.argv.slice(2)))
