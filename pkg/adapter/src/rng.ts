/**
 * SplitMix64 in counter mode, matching the engine's generator: draw i of the
 * stream keyed by k is finalize(k + (i + 1) * GOLDEN). Used here only to
 * build deterministic model weights and embeddings.
 */

const MASK = (1n << 64n) - 1n
const GOLDEN = 0x9e3779b97f4a7c15n
const MIX1 = 0xbf58476d1ce4e5b9n
const MIX2 = 0x94d049bb133111ebn

export function mix (z: bigint): bigint {
  z &= MASK
  z = ((z ^ (z >> 30n)) * MIX1) & MASK
  z = ((z ^ (z >> 27n)) * MIX2) & MASK
  return z ^ (z >> 31n)
}

export function streamKey (seed: bigint, ...tags: bigint[]): bigint {
  let h = mix(seed & MASK)
  for (const t of tags) {
    h = mix(h ^ mix((t + 1n) & MASK))
  }
  return h
}

export class Stream {
  private readonly key: bigint
  private cursor = 0n

  constructor (seed: number | bigint, ...tags: Array<number | bigint>) {
    this.key = streamKey(BigInt(seed), ...tags.map(BigInt))
  }

  u64 (): bigint {
    this.cursor += 1n
    return mix((this.key + this.cursor * GOLDEN) & MASK)
  }

  /** float64 in [0, 1) from the top 53 bits */
  uniform (): number {
    return Number(this.u64() >> 11n) * 2 ** -53
  }

  uniformOpen (): number {
    return (Number(this.u64() >> 11n) + 1) * 2 ** -53
  }

  /** standard gaussians via Box-Muller; generated in pairs like the engine */
  normals (n: number): Float64Array {
    const out = new Float64Array(n)
    for (let i = 0; i < n; i += 2) {
      const r = Math.sqrt(-2 * Math.log(this.uniformOpen()))
      const theta = 2 * Math.PI * this.uniform()
      out[i] = r * Math.cos(theta)
      if (i + 1 < n) out[i + 1] = r * Math.sin(theta)
    }
    return out
  }
}
