// Binary embedding file layout (little-endian, no padding):
//
//   magic   4 bytes  "HIDE"
//   version u16      currently 1
//   dim     u32      feature dimension
//   count   u32      number of samples
//   classes u32      number of distinct class ids
//   records count x { class_id u32, task_id u32, dim x f32 }
//
// This layout is shared bit-exactly with the training engine's loader.

export const MAGIC = Buffer.from('HIDE', 'ascii')
export const VERSION = 1

export interface EmbeddingRecord {
  classId: number
  taskId: number
  vector: Float32Array
}

export function writeEmbeddingFile(
  records: EmbeddingRecord[],
  dim: number,
  classCount: number,
): Buffer {
  for (const r of records) {
    if (r.vector.length !== dim) {
      throw new Error(`record has dim ${r.vector.length}, expected ${dim}`)
    }
    if (r.classId < 0 || r.classId >= classCount) {
      throw new Error(`class id ${r.classId} outside 0..${classCount - 1}`)
    }
  }
  const header = Buffer.alloc(18)
  MAGIC.copy(header, 0)
  header.writeUInt16LE(VERSION, 4)
  header.writeUInt32LE(dim, 6)
  header.writeUInt32LE(records.length, 10)
  header.writeUInt32LE(classCount, 14)

  const recordSize = 8 + 4 * dim
  const body = Buffer.alloc(recordSize * records.length)
  records.forEach((r, i) => {
    const base = i * recordSize
    body.writeUInt32LE(r.classId, base)
    body.writeUInt32LE(r.taskId, base + 4)
    for (let j = 0; j < dim; j++) {
      body.writeFloatLE(r.vector[j], base + 8 + 4 * j)
    }
  })
  return Buffer.concat([header, body])
}

export interface EmbeddingFile {
  dim: number
  classCount: number
  records: EmbeddingRecord[]
}

export function readEmbeddingFile(data: Buffer): EmbeddingFile {
  if (data.length < 4 || !data.subarray(0, 4).equals(MAGIC)) {
    throw new Error('bad magic at byte offset 0')
  }
  if (data.length < 18) throw new Error('truncated header')
  const version = data.readUInt16LE(4)
  if (version !== VERSION) throw new Error(`unsupported version ${version}`)
  const dim = data.readUInt32LE(6)
  const count = data.readUInt32LE(10)
  const classCount = data.readUInt32LE(14)
  const recordSize = 8 + 4 * dim
  const expected = 18 + count * recordSize
  if (data.length < expected) {
    throw new Error(`truncated payload at byte offset ${data.length}`)
  }
  if (data.length > expected) {
    throw new Error(`trailing bytes at byte offset ${expected}`)
  }
  const records: EmbeddingRecord[] = []
  for (let i = 0; i < count; i++) {
    const base = 18 + i * recordSize
    const classId = data.readUInt32LE(base)
    if (classId >= classCount) {
      throw new Error(`class id ${classId} >= class count at offset ${base}`)
    }
    const vector = new Float32Array(dim)
    for (let j = 0; j < dim; j++) {
      vector[j] = data.readFloatLE(base + 8 + 4 * j)
    }
    records.push({ classId, taskId: data.readUInt32LE(base + 4), vector })
  }
  return { dim, classCount, records }
}
