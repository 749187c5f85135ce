/**
 * Adapter contract tests.
 *
 * The engine CLI is the source of truth for the record format: every capture
 * must pass `edloc validate`, and live-blended latents must match the
 * engine's offline replay of the same records byte for byte.
 */

import assert from 'node:assert/strict'
import { spawnSync } from 'node:child_process'
import { mkdtempSync, readFileSync, readdirSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join, resolve } from 'node:path'
import { test } from 'node:test'
import { fileURLToPath } from 'node:url'

import { captureRun, HookConfig } from '../src/capture.js'
import { interveneRun } from '../src/intervene.js'
import { DEFAULT_MODEL } from '../src/model.js'
import { writeMask } from '../src/records.js'

const here = fileURLToPath(new URL('.', import.meta.url))
const engineSrc = resolve(here, '..', '..', '..', 'src')

function engine (...args: string[]): { status: number, stdout: string, stderr: string } {
  const proc = spawnSync('python3', ['-m', 'edloc', ...args], {
    encoding: 'utf-8',
    env: { ...process.env, PYTHONPATH: engineSrc }
  })
  return { status: proc.status ?? -1, stdout: proc.stdout, stderr: proc.stderr }
}

function freshDir (label: string): string {
  return mkdtempSync(join(tmpdir(), `edloc-adapter-${label}-`))
}

function cfgFor (outDir: string, seed = 7): HookConfig {
  return { model: { ...DEFAULT_MODEL, seed }, outDir, task: 'replacement' }
}

function treeBytes (dir: string): Map<string, Buffer> {
  const out = new Map<string, Buffer>()
  for (const name of readdirSync(dir, { recursive: true }) as string[]) {
    const path = join(dir, name)
    try {
      out.set(name, readFileSync(path))
    } catch {
      // directory entry
    }
  }
  return out
}

test('capture produces a store that passes engine validation', () => {
  const dir = freshDir('validate')
  captureRun(cfgFor(dir))
  const result = engine('validate', '--record-dir', dir)
  assert.equal(result.status, 0,
    `validate exited ${result.status}\n${result.stdout}\n${result.stderr}`)
  assert.match(result.stdout, /files valid/)
  assert.doesNotMatch(result.stdout, /FAIL/)
})

test('two captures of the same run are byte-identical', () => {
  const a = freshDir('det-a')
  const b = freshDir('det-b')
  captureRun(cfgFor(a))
  captureRun(cfgFor(b))
  const ta = treeBytes(a)
  const tb = treeBytes(b)
  assert.deepEqual([...ta.keys()].sort(), [...tb.keys()].sort())
  for (const [name, bytes] of ta) {
    assert.ok(bytes.equals(tb.get(name)!), `${name} differs between captures`)
  }
})

test('restricting capture to one layer dumps one attention file per stream and step', () => {
  const dir = freshDir('layer-subset')
  captureRun({ ...cfgFor(dir), layers: [2] })
  const names = readdirSync(dir).filter(n => n.startsWith('attn_'))
  assert.equal(names.length, 2 * DEFAULT_MODEL.nTimesteps)
  assert.ok(names.every(n => n.startsWith('attn_L2_')))
  const result = engine('validate', '--record-dir', dir)
  assert.equal(result.status, 0)
})

test('head-averaging flag is recorded and per-head dumps are opt-in', () => {
  const onDir = freshDir('heads-on')
  captureRun(cfgFor(onDir))
  const manifest = readFileSync(join(onDir, 'manifest.txt'), 'utf-8')
  assert.match(manifest, /head_average = true/)
  assert.match(manifest, new RegExp(`n_heads = ${DEFAULT_MODEL.nHeads}`))

  const offDir = freshDir('heads-off')
  captureRun({ ...cfgFor(offDir), headAverage: false })
  const offManifest = readFileSync(join(offDir, 'manifest.txt'), 'utf-8')
  assert.match(offManifest, /head_average = false/)
  assert.ok(readdirSync(join(offDir, 'heads')).length > 0)
  assert.equal(engine('validate', '--record-dir', offDir).status, 0)
})

test('empty plan leaves the run identical to the base model', () => {
  const base = freshDir('noop-base')
  const blended = freshDir('noop-blend')
  const baseRun = captureRun(cfgFor(base))
  const noop = interveneRun(cfgFor(blended), { applyAt: [], masksDir: blended })
  assert.deepEqual(noop.appliedSteps, [])
  assert.deepEqual(Array.from(noop.finalTarget), Array.from(baseRun.finalTarget))
})

test('all-ones masks at applied steps reproduce the base run exactly', () => {
  const base = freshDir('ones-base')
  const masks = freshDir('ones-masks')
  const out = freshDir('ones-out')
  const baseRun = captureRun(cfgFor(base))
  const nImg = DEFAULT_MODEL.gridH * DEFAULT_MODEL.gridW
  const ones = new Uint8Array(nImg).fill(1)
  for (const step of [1, 3]) {
    writeMask(masks, 'postprocessed', 'combined', DEFAULT_MODEL.nLayers - 1, step, ones)
  }
  const run = interveneRun(cfgFor(out), { applyAt: [1, 3], masksDir: masks })
  assert.deepEqual(run.appliedSteps, [1, 3])
  assert.deepEqual(Array.from(run.finalTarget), Array.from(baseRun.finalTarget))
})

test('live blended latents equal the engine offline replay byte for byte', () => {
  const captureDir = freshDir('xcheck-capture')
  captureRun(cfgFor(captureDir))

  const locDir = join(captureDir, 'localize')
  const loc = engine('localize', '--record-dir', captureDir, '--out', locDir,
    '--no-pgm')
  assert.equal(loc.status, 0, loc.stderr)

  const liveDir = freshDir('xcheck-live')
  const live = interveneRun(cfgFor(liveDir), { applyAt: [1, 3], masksDir: locDir },
    join(liveDir, 'edited.pgm'))
  assert.deepEqual(live.appliedSteps, [1, 3])

  const replayDir = join(liveDir, 'replay')
  const blend = engine('blend', '--record-dir', liveDir, '--masks-dir', locDir,
    '--out', replayDir, '--apply-at', '1,3')
  assert.equal(blend.status, 0, blend.stderr)

  for (let t = 0; t < DEFAULT_MODEL.nTimesteps; t++) {
    const liveBytes = readFileSync(join(liveDir, `blended_T${t}.edloc`))
    const replayBytes = readFileSync(join(replayDir, `blended_T${t}.edloc`))
    assert.ok(liveBytes.equals(replayBytes), `blended_T${t} differs from offline replay`)
  }
  assert.ok(readFileSync(join(liveDir, 'edited.pgm')).length > 0)
})

test('intervened store still passes engine validation', () => {
  const captureDir = freshDir('ivalid-capture')
  captureRun(cfgFor(captureDir))
  const locDir = join(captureDir, 'localize')
  assert.equal(engine('localize', '--record-dir', captureDir, '--out', locDir,
    '--no-pgm').status, 0)
  const liveDir = freshDir('ivalid-live')
  interveneRun(cfgFor(liveDir), { applyAt: [2], masksDir: locDir })
  assert.equal(engine('validate', '--record-dir', liveDir).status, 0)
})
