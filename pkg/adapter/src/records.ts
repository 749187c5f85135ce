/**
 * Writer/reader for the engine's binary record format.
 *
 * 22-byte header: magic "EDLOC1\0\0", version byte, kind byte, then
 * layer / timestep / stream as uint32 LE (0xFFFFFFFF = absent); payload is
 * row-major float32 LE. Attention records store the image-to-text slice then
 * the image-to-image slice. File names are canonical and cross-checked by
 * the engine, so they are produced here from the same scheme.
 */

import { mkdirSync, readFileSync, writeFileSync } from 'node:fs'
import { join } from 'node:path'

export const MAGIC = 'EDLOC1\0\0'
export const VERSION = 1
export const HEADER_SIZE = 22
export const NONE_U32 = 0xffffffff

export const KIND_ATTENTION = 1
export const KIND_FEATURE = 2
export const KIND_LATENT = 3
export const MASK_KINDS: Record<string, number> = {
  attention_raw: 4,
  attention_propagated: 5,
  feature: 6,
  task_combined: 7,
  postprocessed: 8,
  ground_truth: 9
}

export type StreamName = 'target' | 'source'
export const STREAM_CODES: Record<string, number> = { target: 0, source: 1, combined: 2 }
export const ROLE_CODES: Record<string, number> = { initial_noise: 0, source: 1, current: 2 }
const STREAM_TOKENS: Record<string, string> = { target: 'tgt', source: 'src', combined: 'comb' }

export interface Layout {
  nTxt: number
  nImg: number
  gridH: number
  gridW: number
  d: number
  nLayers: number
  nTimesteps: number
  nHeads: number
}

function header (kind: number, layer: number, timestep: number, stream: number): Buffer {
  const buf = Buffer.alloc(HEADER_SIZE)
  buf.write(MAGIC, 0, 'latin1')
  buf.writeUInt8(VERSION, 8)
  buf.writeUInt8(kind, 9)
  buf.writeUInt32LE(layer >>> 0, 10)
  buf.writeUInt32LE(timestep >>> 0, 14)
  buf.writeUInt32LE(stream >>> 0, 18)
  return buf
}

function payload (values: Float32Array): Buffer {
  const buf = Buffer.alloc(values.length * 4)
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4)
  return buf
}

export function attentionName (layer: number, timestep: number, stream: StreamName): string {
  return `attn_L${layer}_T${timestep}_${STREAM_TOKENS[stream]}.edloc`
}

export function featureName (layer: number, timestep: number, stream: StreamName): string {
  return `feat_L${layer}_T${timestep}_${STREAM_TOKENS[stream]}.edloc`
}

export function writeAttention (dir: string, layer: number, timestep: number,
  stream: StreamName, ca: Float32Array, sa: Float32Array): void {
  const body = Buffer.concat([payload(ca), payload(sa)])
  writeFileSync(join(dir, attentionName(layer, timestep, stream)),
    Buffer.concat([header(KIND_ATTENTION, layer, timestep, STREAM_CODES[stream]), body]))
}

export function writeFeature (dir: string, layer: number, timestep: number,
  stream: StreamName, f: Float32Array): void {
  writeFileSync(join(dir, featureName(layer, timestep, stream)),
    Buffer.concat([header(KIND_FEATURE, layer, timestep, STREAM_CODES[stream]), payload(f)]))
}

export function writeLatent (dir: string, role: 'initial_noise' | 'source' | 'current',
  timestep: number | null, z: Float32Array, fileName?: string): void {
  const name = fileName ?? (role === 'initial_noise'
    ? 'latent_init.edloc'
    : role === 'source' ? 'latent_src.edloc' : `latent_cur_T${timestep}.edloc`)
  const t = timestep === null ? NONE_U32 : timestep
  writeFileSync(join(dir, name),
    Buffer.concat([header(KIND_LATENT, NONE_U32, t, ROLE_CODES[role]), payload(z)]))
}

export interface MaskRecord {
  stage: string
  stream: string
  layer: number | null
  timestep: number | null
  bits: Uint8Array
}

export function readMask (path: string, layout: Layout): MaskRecord {
  const data = readFileSync(path)
  if (data.length < HEADER_SIZE) throw new Error(`${path}: truncated header`)
  if (data.toString('latin1', 0, 8) !== MAGIC) throw new Error(`${path}: unrecognized format`)
  if (data.readUInt8(8) !== VERSION) throw new Error(`${path}: unsupported version`)
  const kind = data.readUInt8(9)
  const stage = Object.keys(MASK_KINDS).find(k => MASK_KINDS[k] === kind)
  if (stage === undefined) throw new Error(`${path}: not a mask record (kind ${kind})`)
  const layer = data.readUInt32LE(10)
  const timestep = data.readUInt32LE(14)
  const streamCode = data.readUInt32LE(18)
  const stream = Object.keys(STREAM_CODES).find(k => STREAM_CODES[k] === streamCode)
  if (stream === undefined) throw new Error(`${path}: invalid stream code`)
  const expected = HEADER_SIZE + 4 * layout.nImg
  if (data.length !== expected) {
    throw new Error(`${path}: expected ${expected} bytes, got ${data.length}`)
  }
  const bits = new Uint8Array(layout.nImg)
  for (let i = 0; i < layout.nImg; i++) {
    const v = data.readFloatLE(HEADER_SIZE + 4 * i)
    if (v !== 0 && v !== 1) throw new Error(`${path}: mask entry ${i} is not 0/1`)
    bits[i] = v
  }
  return {
    stage,
    stream,
    layer: layer === NONE_U32 ? null : layer,
    timestep: timestep === NONE_U32 ? null : timestep,
    bits
  }
}

export function writeMask (dir: string, stage: string, stream: string,
  layer: number | null, timestep: number | null, bits: Uint8Array): string {
  const stageToken: Record<string, string> = {
    attention_raw: 'attnraw',
    attention_propagated: 'attnprop',
    feature: 'feat',
    task_combined: 'comb',
    postprocessed: 'post'
  }
  const name = `mask_${stageToken[stage]}${layer === null ? '' : `_L${layer}`}` +
    `_T${timestep}_${STREAM_TOKENS[stream]}.edloc`
  const values = Float32Array.from(bits)
  writeFileSync(join(dir, name), Buffer.concat([
    header(MASK_KINDS[stage], layer === null ? NONE_U32 : layer,
      timestep === null ? NONE_U32 : timestep, STREAM_CODES[stream]),
    payload(values)
  ]))
  return name
}

/**
 * Shortest round-trip decimal for a float64; matches the engine's manifest
 * float formatting for schedule values.
 */
function formatFloat (x: number): string {
  if (Number.isInteger(x)) return `${x}.0`
  return String(x)
}

export function writeManifest (dir: string, layout: Layout, sigma: number[],
  task: string, selected: number[], label: string,
  extras: Record<string, string> = {}): void {
  const lines = [
    'format = edloc-manifest',
    `version = ${VERSION}`,
    `n_txt = ${layout.nTxt}`,
    `n_img = ${layout.nImg}`,
    `grid_h = ${layout.gridH}`,
    `grid_w = ${layout.gridW}`,
    `d = ${layout.d}`,
    `n_layers = ${layout.nLayers}`,
    `n_timesteps = ${layout.nTimesteps}`,
    `n_heads = ${layout.nHeads}`,
    `sigma = ${sigma.map(formatFloat).join(',')}`,
    `task = ${task}`,
    `selected_text_indices = ${selected.join(',')}`,
    `label = ${label}`
  ]
  for (const key of Object.keys(extras).sort()) {
    lines.push(`${key} = ${extras[key]}`)
  }
  mkdirSync(dir, { recursive: true })
  writeFileSync(join(dir, 'manifest.txt'), lines.join('\n') + '\n', 'utf-8')
}

/** P5 graymap of a [0,1] field, for the edited-image dump */
export function writePgm (path: string, values: Float64Array, gridH: number, gridW: number): void {
  let lo = Infinity
  let hi = -Infinity
  for (const v of values) {
    lo = Math.min(lo, v)
    hi = Math.max(hi, v)
  }
  const span = hi > lo ? hi - lo : 1
  const pixels = Buffer.alloc(values.length)
  for (let i = 0; i < values.length; i++) {
    pixels[i] = Math.round(((values[i] - lo) / span) * 255)
  }
  writeFileSync(path, Buffer.concat([Buffer.from(`P5\n${gridW} ${gridH}\n255\n`, 'ascii'), pixels]))
}
