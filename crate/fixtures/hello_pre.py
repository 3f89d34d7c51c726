def Hello()
  print("Say")
  print("Hello")
