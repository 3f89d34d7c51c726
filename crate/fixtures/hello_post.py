def GoodBye()
  print("Say")
  print("GoodBye")
