/**
 * Reader and writer for the binary feature-store format consumed by the
 * Python evaluation package.
 *
 * Layout, all little-endian:
 *   magic "OMFS", u32 version (1), u32 flags, u32 n, h, w, p, class count.
 *   Flags: bit 0 pooled records, bit 1 separate support/query pools.
 *   Per class: u16 name length, UTF-8 name, u32 record count, then records
 *   as float32. Raw records are channel-major n*h*w volumes and the header
 *   carries p = 0; pooled records are p columns of n floats with h = w = 0.
 *
 * The exporter only ever writes raw stores (flags 0); the reader handles
 * both kinds so tests can round-trip files byte for byte.
 */

import * as fs from 'node:fs'

export const MAGIC = 'OMFS'
export const VERSION = 1
const FLAG_POOLED = 1
const FLAG_SPLIT = 2

export interface ClassRecords {
  name: string
  /** One Float32Array per record, length n*h*w raw or n*p pooled. */
  records: Float32Array[]
}

export interface FeatureStore {
  pooled: boolean
  split: boolean
  n: number
  h: number
  w: number
  p: number
  classes: ClassRecords[]
}

export class StoreFormatError extends Error {}

function recordLength(store: FeatureStore): number {
  return store.pooled ? store.n * store.p : store.n * store.h * store.w
}

/** Serialize a store to the exact on-disk byte layout. */
export function encodeStore(store: FeatureStore): Buffer {
  if (store.classes.length === 0) {
    throw new StoreFormatError('store needs at least one class')
  }
  if (store.pooled ? store.h !== 0 || store.w !== 0 : store.p !== 0) {
    throw new StoreFormatError('unused dimensions must be zero')
  }
  const seen = new Set<string>()
  const expected = recordLength(store)
  const parts: Buffer[] = []

  const header = Buffer.alloc(4 + 7 * 4)
  header.write(MAGIC, 0, 'ascii')
  const flags = (store.pooled ? FLAG_POOLED : 0) | (store.split ? FLAG_SPLIT : 0)
  const fields = [VERSION, flags, store.n, store.h, store.w, store.p, store.classes.length]
  fields.forEach((value, i) => header.writeUInt32LE(value, 4 + 4 * i))
  parts.push(header)

  for (const cls of store.classes) {
    if (seen.has(cls.name)) {
      throw new StoreFormatError(`duplicate class name: ${cls.name}`)
    }
    seen.add(cls.name)
    if (cls.records.length === 0) {
      throw new StoreFormatError(`class ${cls.name} has no records`)
    }
    const name = Buffer.from(cls.name, 'utf-8')
    const lenField = Buffer.alloc(2)
    lenField.writeUInt16LE(name.length, 0)
    const countField = Buffer.alloc(4)
    countField.writeUInt32LE(cls.records.length, 0)
    parts.push(lenField, name, countField)
    for (const record of cls.records) {
      if (record.length !== expected) {
        throw new StoreFormatError(
          `class ${cls.name}: record has ${record.length} values, expected ${expected}`,
        )
      }
      const payload = Buffer.alloc(4 * record.length)
      for (let i = 0; i < record.length; i++) {
        payload.writeFloatLE(record[i], 4 * i)
      }
      parts.push(payload)
    }
  }
  return Buffer.concat(parts)
}

export function writeStore(path: string, store: FeatureStore): void {
  fs.writeFileSync(path, encodeStore(store))
}

class Cursor {
  offset = 0
  constructor(private buf: Buffer) {}

  private take(size: number, what: string): number {
    if (this.offset + size > this.buf.length) {
      throw new StoreFormatError(`unexpected end of file reading ${what}`)
    }
    const at = this.offset
    this.offset += size
    return at
  }

  u16(what: string): number {
    return this.buf.readUInt16LE(this.take(2, what))
  }

  u32(what: string): number {
    return this.buf.readUInt32LE(this.take(4, what))
  }

  bytes(size: number, what: string): Buffer {
    const at = this.take(size, what)
    return this.buf.subarray(at, at + size)
  }

  floats(count: number, what: string): Float32Array {
    const at = this.take(4 * count, what)
    const out = new Float32Array(count)
    for (let i = 0; i < count; i++) {
      out[i] = this.buf.readFloatLE(at + 4 * i)
    }
    return out
  }

  done(): boolean {
    return this.offset === this.buf.length
  }
}

export function decodeStore(buf: Buffer): FeatureStore {
  const cur = new Cursor(buf)
  if (cur.bytes(4, 'magic').toString('ascii') !== MAGIC) {
    throw new StoreFormatError('bad magic')
  }
  const version = cur.u32('version')
  if (version !== VERSION) {
    throw new StoreFormatError(`unsupported version: ${version}`)
  }
  const flags = cur.u32('flags')
  if ((flags & ~(FLAG_POOLED | FLAG_SPLIT)) !== 0) {
    throw new StoreFormatError(`unknown flag bits: ${flags}`)
  }
  const store: FeatureStore = {
    pooled: (flags & FLAG_POOLED) !== 0,
    split: (flags & FLAG_SPLIT) !== 0,
    n: cur.u32('n'),
    h: cur.u32('h'),
    w: cur.u32('w'),
    p: cur.u32('p'),
    classes: [],
  }
  const classCount = cur.u32('class count')
  if (classCount === 0) {
    throw new StoreFormatError('store needs at least one class')
  }
  const expected = recordLength(store)
  const seen = new Set<string>()
  for (let c = 0; c < classCount; c++) {
    const nameLen = cur.u16('name length')
    const name = cur.bytes(nameLen, 'class name').toString('utf-8')
    if (seen.has(name)) {
      throw new StoreFormatError(`duplicate class name: ${name}`)
    }
    seen.add(name)
    const count = cur.u32('record count')
    if (count === 0) {
      throw new StoreFormatError(`class ${name} has no records`)
    }
    const records: Float32Array[] = []
    for (let r = 0; r < count; r++) {
      records.push(cur.floats(expected, `record ${r} of ${name}`))
    }
    store.classes.push({ name, records })
  }
  if (!cur.done()) {
    throw new StoreFormatError('trailing bytes after last record')
  }
  return store
}

export function readStore(path: string): FeatureStore {
  return decodeStore(fs.readFileSync(path))
}
