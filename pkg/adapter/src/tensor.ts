/**
 * Minimal dense float64 matrices; just enough linear algebra for a small
 * joint-attention transformer.
 */

export interface Mat {
  rows: number
  cols: number
  data: Float64Array
}

export function zeros (rows: number, cols: number): Mat {
  return { rows, cols, data: new Float64Array(rows * cols) }
}

export function fromRows (rows: number, cols: number, fill: (i: number, j: number) => number): Mat {
  const m = zeros(rows, cols)
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) m.data[i * cols + j] = fill(i, j)
  }
  return m
}

export function clone (a: Mat): Mat {
  return { rows: a.rows, cols: a.cols, data: new Float64Array(a.data) }
}

export function matmul (a: Mat, b: Mat): Mat {
  if (a.cols !== b.rows) throw new Error(`matmul shape mismatch: ${a.rows}x${a.cols} @ ${b.rows}x${b.cols}`)
  const out = zeros(a.rows, b.cols)
  for (let i = 0; i < a.rows; i++) {
    for (let k = 0; k < a.cols; k++) {
      const aik = a.data[i * a.cols + k]
      if (aik === 0) continue
      for (let j = 0; j < b.cols; j++) {
        out.data[i * b.cols + j] += aik * b.data[k * b.cols + j]
      }
    }
  }
  return out
}

export function transpose (a: Mat): Mat {
  const out = zeros(a.cols, a.rows)
  for (let i = 0; i < a.rows; i++) {
    for (let j = 0; j < a.cols; j++) out.data[j * a.rows + i] = a.data[i * a.cols + j]
  }
  return out
}

export function addInPlace (a: Mat, b: Mat): void {
  for (let i = 0; i < a.data.length; i++) a.data[i] += b.data[i]
}

export function scaleInPlace (a: Mat, s: number): void {
  for (let i = 0; i < a.data.length; i++) a.data[i] *= s
}

/** row-wise softmax with max subtraction */
export function softmaxRows (a: Mat): Mat {
  const out = zeros(a.rows, a.cols)
  for (let i = 0; i < a.rows; i++) {
    let max = -Infinity
    for (let j = 0; j < a.cols; j++) max = Math.max(max, a.data[i * a.cols + j])
    let sum = 0
    for (let j = 0; j < a.cols; j++) {
      const e = Math.exp(a.data[i * a.cols + j] - max)
      out.data[i * a.cols + j] = e
      sum += e
    }
    for (let j = 0; j < a.cols; j++) out.data[i * a.cols + j] /= sum
  }
  return out
}

export function sliceRows (a: Mat, start: number, end: number): Mat {
  const rows = end - start
  return { rows, cols: a.cols, data: a.data.slice(start * a.cols, end * a.cols) }
}

/** rectangular block a[r0:r1, c0:c1] */
export function block (a: Mat, r0: number, r1: number, c0: number, c1: number): Mat {
  const out = zeros(r1 - r0, c1 - c0)
  for (let i = r0; i < r1; i++) {
    for (let j = c0; j < c1; j++) {
      out.data[(i - r0) * out.cols + (j - c0)] = a.data[i * a.cols + j]
    }
  }
  return out
}

export function concatRows (parts: Mat[]): Mat {
  const cols = parts[0].cols
  const rows = parts.reduce((n, p) => n + p.rows, 0)
  const out = zeros(rows, cols)
  let offset = 0
  for (const p of parts) {
    out.data.set(p.data, offset)
    offset += p.data.length
  }
  return out
}

/** quantize every entry to float32 precision (still held as float64) */
export function froundInPlace (a: Mat): void {
  for (let i = 0; i < a.data.length; i++) a.data[i] = Math.fround(a.data[i])
}

export function toFloat32 (a: Mat): Float32Array {
  return Float32Array.from(a.data)
}
