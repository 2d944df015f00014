#!/usr/bin/env node
// Writes a tiny deterministic image-folder tree (three classes over two
// tasks) plus its mapping file; used by the tests and the engine's
// acceptance suite.
import * as fs from 'node:fs'
import * as path from 'node:path'
import { PNG } from 'pngjs'

export function writeFixtures(root: string): void {
  const specs: { name: string; classId: number; taskId: number; tint: [number, number, number] }[] = [
    { name: 'amber', classId: 0, taskId: 0, tint: [220, 140, 30] },
    { name: 'teal', classId: 1, taskId: 0, tint: [20, 160, 150] },
    { name: 'plum', classId: 2, taskId: 1, tint: [120, 40, 130] },
  ]
  const mapping: Record<string, { class: number; task: number }> = {}
  for (const spec of specs) {
    const dir = path.join(root, spec.name)
    fs.mkdirSync(dir, { recursive: true })
    mapping[spec.name] = { class: spec.classId, task: spec.taskId }
    for (let i = 0; i < 2; i++) {
      const png = new PNG({ width: 24, height: 24 })
      for (let y = 0; y < 24; y++) {
        for (let x = 0; x < 24; x++) {
          const p = (y * 24 + x) * 4
          // deterministic per-pixel pattern on top of the class tint
          png.data[p] = (spec.tint[0] + 13 * i + ((x * 7 + y * 3) % 31)) % 256
          png.data[p + 1] = (spec.tint[1] + 17 * i + ((x * 5 + y * 11) % 29)) % 256
          png.data[p + 2] = (spec.tint[2] + 7 * i + ((x * 3 + y * 13) % 37)) % 256
          png.data[p + 3] = 255
        }
      }
      fs.writeFileSync(path.join(dir, `sample_${i}.png`),
        PNG.sync.write(png))
    }
  }
  fs.writeFileSync(path.join(root, 'mapping.json'),
    JSON.stringify({ classes: mapping }, null, 2) + '\n')
}

if (require.main === module) {
  const root = process.argv[2]
  if (!root) {
    console.error('usage: fixtures <output-dir>')
    process.exit(2)
  }
  writeFixtures(root)
  console.log(`fixtures written to ${root}`)
}
