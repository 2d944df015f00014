import * as fs from 'node:fs'
import * as path from 'node:path'
import { writeEmbeddingFile, EmbeddingRecord } from './format'
import { decodeImage } from './image'
import { ClassMapping, loadMapping } from './mapping'
import { FeatureModel, loadModel } from './model'

export interface ExtractSpec {
  model: string
  imagesRoot: string
  mappingFile: string
  outFile: string
  batchSize?: number
}

export interface ExtractResult {
  processed: string[]
  skipped: { file: string; reason: string }[]
}

const IMAGE_EXT = new Set(['.png', '.jpg', '.jpeg'])

function listImages(root: string): { file: string; className: string }[] {
  const out: { file: string; className: string }[] = []
  // sorted walk keeps record order (and output bytes) deterministic
  for (const dirent of fs.readdirSync(root, { withFileTypes: true }).sort(
    (a, b) => a.name.localeCompare(b.name))) {
    if (!dirent.isDirectory()) continue
    const dir = path.join(root, dirent.name)
    for (const file of fs.readdirSync(dir).sort()) {
      if (IMAGE_EXT.has(path.extname(file).toLowerCase())) {
        out.push({ file: path.join(dir, file), className: dirent.name })
      }
    }
  }
  return out
}

export function extract(spec: ExtractSpec): ExtractResult {
  const model: FeatureModel = loadModel(spec.model) // load failure is fatal
  const mapping: ClassMapping = loadMapping(spec.mappingFile)
  const images = listImages(spec.imagesRoot)
  if (images.length === 0) {
    throw new Error(`no images found under ${spec.imagesRoot}`)
  }
  for (const img of images) {
    if (!mapping.classes.has(img.className)) {
      throw new Error(
        `mapping file has no entry for class folder '${img.className}'`)
    }
  }

  const records: EmbeddingRecord[] = []
  const result: ExtractResult = { processed: [], skipped: [] }
  for (const img of images) {
    const target = mapping.classes.get(img.className)!
    try {
      const decoded = decodeImage(img.file)
      records.push({
        classId: target.classId,
        taskId: target.taskId,
        vector: model.embed(decoded),
      })
      result.processed.push(img.file)
    } catch (err) {
      const reason = err instanceof Error ? err.message : String(err)
      console.warn(`warning: skipping ${img.file}: ${reason}`)
      result.skipped.push({ file: img.file, reason })
    }
  }
  const payload = writeEmbeddingFile(records, model.dim, mapping.classCount)
  fs.writeFileSync(spec.outFile, payload)
  fs.writeFileSync(
    `${spec.outFile}.manifest.json`,
    JSON.stringify(
      { model: model.id, dim: model.dim, ...result }, null, 2) + '\n')
  return result
}
