/**
 * A miniature dual-stream editing transformer used as the live host model.
 *
 * One joint token sequence [text; target; source] flows through L layers of
 * multi-head joint attention (true softmax over the full sequence, scaled by
 * sqrt(head dim)) with residual output projections. The target block is the
 * only evolving state: an Euler step along a learned-velocity stand-in moves
 * it between denoising steps on a linear noise schedule. Weights, text and
 * source embeddings, and the initial noise all derive from one seed, so runs
 * are exactly reproducible.
 *
 * Latents are quantized to float32 precision at every step boundary; dumped
 * records therefore equal the live values bit for bit, which is what makes
 * offline replay comparisons exact.
 */

import { Stream } from './rng.js'
import {
  Mat, addInPlace, block, clone, concatRows, fromRows, froundInPlace,
  matmul, scaleInPlace, sliceRows, softmaxRows, transpose, zeros
} from './tensor.js'

export interface ModelConfig {
  seed: number
  nTxt: number
  gridH: number
  gridW: number
  d: number
  nLayers: number
  nTimesteps: number
  nHeads: number
}

export const DEFAULT_MODEL: ModelConfig = {
  seed: 0, nTxt: 6, gridH: 8, gridW: 8, d: 16, nLayers: 3, nTimesteps: 6, nHeads: 2
}

export interface AttentionEvent {
  layer: number
  timestep: number
  /** head-averaged joint attention, (nTxt+2*nImg)^2 */
  joint: Mat
  /** per-head joint attention, before averaging */
  heads: Mat[]
  /** joint-attention output features A.V, (nTxt+2*nImg) x d */
  features: Mat
}

export type AttentionHook = (event: AttentionEvent) => void

export interface StepState {
  timestep: number
  sigma: number
  /** target latent at the start of the step, after any intervention */
  target: Mat
  /** target latent before the intervention (equals `target` without one) */
  preIntervention: Mat
}

export type Intervention = (timestep: number, target: Mat) => Mat

interface LayerWeights {
  wq: Mat
  wk: Mat
  wv: Mat
  wo: Mat
}

function gaussianMat (stream: Stream, rows: number, cols: number, scale: number): Mat {
  const values = stream.normals(rows * cols)
  return fromRows(rows, cols, (i, j) => values[i * cols + j] * scale)
}

export class DualStreamModel {
  readonly cfg: ModelConfig
  readonly nImg: number
  readonly sigma: number[]
  readonly textTokens: Mat
  readonly sourceTokens: Mat
  private readonly layers: LayerWeights[]
  private readonly velocityProj: Mat

  constructor (cfg: ModelConfig) {
    this.cfg = cfg
    this.nImg = cfg.gridH * cfg.gridW
    this.sigma = Array.from({ length: cfg.nTimesteps },
      (_, t) => cfg.nTimesteps > 1 ? 1 - t / (cfg.nTimesteps - 1) : 1)
    const scale = 1 / Math.sqrt(cfg.d)
    this.layers = Array.from({ length: cfg.nLayers }, (_, l) => ({
      wq: gaussianMat(new Stream(cfg.seed, 10, l, 0), cfg.d, cfg.d, scale),
      wk: gaussianMat(new Stream(cfg.seed, 10, l, 1), cfg.d, cfg.d, scale),
      wv: gaussianMat(new Stream(cfg.seed, 10, l, 2), cfg.d, cfg.d, scale),
      wo: gaussianMat(new Stream(cfg.seed, 10, l, 3), cfg.d, cfg.d, scale)
    }))
    this.velocityProj = gaussianMat(new Stream(cfg.seed, 11), cfg.d, cfg.d, scale)
    this.textTokens = gaussianMat(new Stream(cfg.seed, 12), cfg.nTxt, cfg.d, 1)
    this.sourceTokens = gaussianMat(new Stream(cfg.seed, 13), this.nImg, cfg.d, 1)
    froundInPlace(this.sourceTokens)
  }

  initialNoise (): Mat {
    const z = gaussianMat(new Stream(this.cfg.seed, 14), this.nImg, this.cfg.d, 1)
    froundInPlace(z)
    return z
  }

  /** one pass of the layer stack; fires the hook per layer, returns the
   * final joint features for the velocity head */
  private forward (target: Mat, timestep: number, hook?: AttentionHook): Mat {
    const { d, nHeads } = this.cfg
    const headDim = d / nHeads
    let joint = concatRows([this.textTokens, target, this.sourceTokens])
    for (let l = 0; l < this.cfg.nLayers; l++) {
      const { wq, wk, wv, wo } = this.layers[l]
      const q = matmul(joint, wq)
      const k = matmul(joint, wk)
      const v = matmul(joint, wv)
      const n = joint.rows
      const headMats: Mat[] = []
      const features = zeros(n, d)
      for (let h = 0; h < nHeads; h++) {
        const qh = block(q, 0, n, h * headDim, (h + 1) * headDim)
        const kh = block(k, 0, n, h * headDim, (h + 1) * headDim)
        const vh = block(v, 0, n, h * headDim, (h + 1) * headDim)
        const logits = matmul(qh, transpose(kh))
        scaleInPlace(logits, 1 / Math.sqrt(headDim))
        const attn = softmaxRows(logits)
        headMats.push(attn)
        const out = matmul(attn, vh)
        for (let i = 0; i < n; i++) {
          for (let j = 0; j < headDim; j++) {
            features.data[i * d + h * headDim + j] = out.data[i * headDim + j]
          }
        }
      }
      const averaged = zeros(joint.rows, joint.rows)
      for (const hm of headMats) addInPlace(averaged, hm)
      scaleInPlace(averaged, 1 / nHeads)
      if (hook !== undefined) {
        hook({ layer: l, timestep, joint: averaged, heads: headMats, features: clone(features) })
      }
      addInPlace(joint, matmul(features, wo))
    }
    return joint
  }

  /**
   * Run the denoising loop. The optional intervention rewrites the target
   * latent at the start of a step (mask-guided blending plugs in here); the
   * hook observes every layer of every step.
   */
  run (hook?: AttentionHook, intervention?: Intervention,
    onStep?: (state: StepState) => void): Mat {
    let target = this.initialNoise()
    for (let t = 0; t < this.cfg.nTimesteps; t++) {
      const pre = clone(target)
      if (intervention !== undefined) {
        target = intervention(t, target)
        froundInPlace(target)
      }
      if (onStep !== undefined) {
        onStep({ timestep: t, sigma: this.sigma[t], target: clone(target), preIntervention: pre })
      }
      const joint = this.forward(target, t, hook)
      if (t + 1 < this.cfg.nTimesteps) {
        const contextual = sliceRows(joint, this.cfg.nTxt, this.cfg.nTxt + this.nImg)
        const velocity = matmul(contextual, this.velocityProj)
        const dSigma = this.sigma[t + 1] - this.sigma[t]
        for (let i = 0; i < target.data.length; i++) {
          target.data[i] += dSigma * velocity.data[i]
        }
        froundInPlace(target)
      }
    }
    return target
  }
}
