/**
 * Capture: hook the host model's joint attention and dump everything the
 * engine consumes — per-(layer, step, stream) attention slices and features,
 * latents, the noise schedule, and the manifest — as one record store.
 *
 * The four slices come from the post-softmax joint matrix: rows of an image
 * stream against text columns (cross) and against the same stream's columns
 * (self). Heads are averaged by default; per-head matrices can be dumped
 * under heads/ for ablation.
 */

import { mkdirSync } from 'node:fs'
import { join } from 'node:path'

import { AttentionEvent, DualStreamModel, Intervention, ModelConfig, StepState } from './model.js'
import { Mat, block, toFloat32 } from './tensor.js'
import {
  Layout, writeAttention, writeFeature, writeLatent, writeManifest
} from './records.js'

export interface HookConfig {
  model: ModelConfig
  outDir: string
  layers?: number[]          // default: all
  timesteps?: number[]       // default: all
  streams?: Array<'target' | 'source'>
  headAverage?: boolean      // default true; false additionally dumps heads/
  instruction?: string
  selectedTextIndices?: number[]
  task?: string
}

export function layoutOf (cfg: ModelConfig): Layout {
  return {
    nTxt: cfg.nTxt,
    nImg: cfg.gridH * cfg.gridW,
    gridH: cfg.gridH,
    gridW: cfg.gridW,
    d: cfg.d,
    nLayers: cfg.nLayers,
    nTimesteps: cfg.nTimesteps,
    nHeads: cfg.nHeads
  }
}

interface StreamWindow {
  name: 'target' | 'source'
  start: number
  end: number
}

function streamWindows (cfg: ModelConfig): StreamWindow[] {
  const nImg = cfg.gridH * cfg.gridW
  return [
    { name: 'target', start: cfg.nTxt, end: cfg.nTxt + nImg },
    { name: 'source', start: cfg.nTxt + nImg, end: cfg.nTxt + 2 * nImg }
  ]
}

function defaultSelected (cfg: HookConfig): number[] {
  if (cfg.selectedTextIndices !== undefined && cfg.selectedTextIndices.length > 0) {
    return cfg.selectedTextIndices
  }
  // benchmark-style phrase extraction is out of scope for the toy host:
  // fall back to every text token
  return Array.from({ length: cfg.model.nTxt }, (_, i) => i)
}

function sliceAndWrite (event: AttentionEvent, cfg: HookConfig, dir: string): void {
  const model = cfg.model
  const wanted = streamWindows(model).filter(
    w => cfg.streams === undefined || cfg.streams.includes(w.name))
  for (const w of wanted) {
    const ca = block(event.joint, w.start, w.end, 0, model.nTxt)
    const sa = block(event.joint, w.start, w.end, w.start, w.end)
    writeAttention(dir, event.layer, event.timestep, w.name, toFloat32(ca), toFloat32(sa))
    const f = block(event.features, w.start, w.end, 0, model.d)
    writeFeature(dir, event.layer, event.timestep, w.name, toFloat32(f))
    if (cfg.headAverage === false) {
      const headsDir = join(dir, 'heads')
      mkdirSync(headsDir, { recursive: true })
      event.heads.forEach((head: Mat, h: number) => {
        const hca = block(head, w.start, w.end, 0, model.nTxt)
        const hsa = block(head, w.start, w.end, w.start, w.end)
        writeAttention(headsDir, event.layer, event.timestep, w.name,
          toFloat32(hca), toFloat32(hsa))
        // one subdirectory per head keeps canonical names intact
        const perHead = join(headsDir, `h${h}`)
        mkdirSync(perHead, { recursive: true })
        writeAttention(perHead, event.layer, event.timestep, w.name,
          toFloat32(hca), toFloat32(hsa))
      })
    }
  }
}

export interface CaptureResult {
  outDir: string
  finalTarget: Float32Array
}

/**
 * Run the model once and dump the full record store; with an intervention it
 * additionally dumps blended_T{t} records (the live post-intervention
 * latents) next to the pre-intervention latent_cur_T{t} trajectory.
 */
export function captureRun (cfg: HookConfig, intervention?: Intervention): CaptureResult {
  const model = new DualStreamModel(cfg.model)
  const dir = cfg.outDir
  const layout = layoutOf(cfg.model)
  writeManifest(dir, layout, model.sigma,
    cfg.task ?? 'replacement',
    defaultSelected(cfg),
    cfg.instruction ?? 'captured run',
    { head_average: String(cfg.headAverage !== false) })

  writeLatent(dir, 'initial_noise', null, toFloat32(model.initialNoise()))
  writeLatent(dir, 'source', null, toFloat32(model.sourceTokens))

  const hook = (event: AttentionEvent): void => {
    if (cfg.layers !== undefined && !cfg.layers.includes(event.layer)) return
    if (cfg.timesteps !== undefined && !cfg.timesteps.includes(event.timestep)) return
    sliceAndWrite(event, cfg, dir)
  }
  const onStep = (state: StepState): void => {
    writeLatent(dir, 'current', state.timestep, toFloat32(state.preIntervention))
    if (intervention !== undefined) {
      writeLatent(dir, 'current', state.timestep, toFloat32(state.target),
        `blended_T${state.timestep}.edloc`)
    }
  }
  const finalTarget = model.run(hook, intervention, onStep)
  return { outDir: dir, finalTarget: toFloat32(finalTarget) }
}
