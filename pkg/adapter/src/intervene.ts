/**
 * Intervention: mask-guided latent blending inside the live denoising loop.
 *
 * At each planned step the target latent is blended with the step-aligned
 * inverted latent sigma_t * initial_noise + (1 - sigma_t) * source; mask-1
 * rows keep the live latent, mask-0 rows take the inverted latent. The
 * arithmetic matches the engine's offline replay exactly (float64 products,
 * float32 quantization), so live blended latents equal the engine's
 * blended_T{t} records bit for bit.
 */

import { existsSync } from 'node:fs'
import { join } from 'node:path'

import { CaptureResult, HookConfig, captureRun, layoutOf } from './capture.js'
import { DualStreamModel, Intervention } from './model.js'
import { Mat, clone, froundInPlace } from './tensor.js'
import { MaskRecord, readMask, writePgm } from './records.js'

export interface PreservationPlan {
  applyAt: number[]
  /** directory holding mask_post_L{l}_T{t}_comb.edloc files */
  masksDir: string
  featureLayer?: number      // default: deepest model layer
}

export function invertedLatent (zInit: Mat, zSrc: Mat, sigma: number): Mat {
  const out = clone(zInit)
  if (sigma === 0) {
    out.data.set(zSrc.data)
    return out
  }
  if (sigma === 1) {
    return out
  }
  for (let i = 0; i < out.data.length; i++) {
    out.data[i] = Math.fround(sigma * zInit.data[i] + (1 - sigma) * zSrc.data[i])
  }
  return out
}

export function blendRows (current: Mat, inverted: Mat, bits: Uint8Array): Mat {
  const out = clone(inverted)
  const d = current.cols
  for (let row = 0; row < current.rows; row++) {
    if (bits[row] === 1) {
      for (let j = 0; j < d; j++) {
        out.data[row * d + j] = current.data[row * d + j]
      }
    }
  }
  return out
}

function loadMasks (plan: PreservationPlan, cfg: HookConfig): Map<number, MaskRecord> {
  const layout = layoutOf(cfg.model)
  const layer = plan.featureLayer ?? cfg.model.nLayers - 1
  const masks = new Map<number, MaskRecord>()
  for (const step of plan.applyAt) {
    const name = `mask_post_L${layer}_T${step}_comb.edloc`
    const path = join(plan.masksDir, name)
    if (!existsSync(path)) {
      throw new Error(`no mask for applied step ${step}: ${path}`)
    }
    masks.set(step, readMask(path, layout))
  }
  return masks
}

export interface InterveneResult extends CaptureResult {
  appliedSteps: number[]
}

/**
 * Re-run the model with blending injected at the planned steps, dumping the
 * full record store (pre-blend trajectory + blended_T{t} latents) and the
 * edited image as a PGM.
 */
export function interveneRun (cfg: HookConfig, plan: PreservationPlan,
  imagePath?: string): InterveneResult {
  const model = new DualStreamModel(cfg.model)
  const masks = loadMasks(plan, cfg)
  const zInit = model.initialNoise()
  const zSrc = model.sourceTokens
  const applied: number[] = []

  const intervention: Intervention = (timestep, target) => {
    const mask = masks.get(timestep)
    if (mask === undefined) return target
    applied.push(timestep)
    const zInv = invertedLatent(zInit, zSrc, model.sigma[timestep])
    return blendRows(target, zInv, mask.bits)
  }

  const result = captureRun(cfg, intervention)
  if (imagePath !== undefined) {
    // toy decode: mean feature channel per token on the grid
    const { gridH, gridW, d } = cfg.model
    const nImg = gridH * gridW
    const gray = new Float64Array(nImg)
    for (let i = 0; i < nImg; i++) {
      let acc = 0
      for (let j = 0; j < d; j++) acc += result.finalTarget[i * d + j]
      gray[i] = acc / d
    }
    writePgm(imagePath, gray, gridH, gridW)
  }
  return { ...result, appliedSteps: applied.sort((a, b) => a - b) }
}

export { froundInPlace }
